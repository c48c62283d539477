// Copyright 2026 The SlotForge Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#pragma once

#include "slotforge/clustering.hpp"
#include "slotforge/corpus.hpp"
#include "slotforge/embedding_io.hpp"
#include "slotforge/error.hpp"
#include "slotforge/evaluation.hpp"
#include "slotforge/pcfg.hpp"
#include "slotforge/pipeline.hpp"
#include "slotforge/schema.hpp"
#include "slotforge/span_extraction.hpp"
