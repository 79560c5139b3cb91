// Copyright 2026 The traitlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Everything except the HTTP transport and the command line, which pull in
// OpenSSL.
#include "traitlab/checkpoint.hpp"
#include "traitlab/classifier.hpp"
#include "traitlab/corpus.hpp"
#include "traitlab/error.hpp"
#include "traitlab/finetune.hpp"
#include "traitlab/interp.hpp"
#include "traitlab/llmclient.hpp"
#include "traitlab/lora.hpp"
#include "traitlab/metrics.hpp"
#include "traitlab/nf4.hpp"
#include "traitlab/optim.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/svg.hpp"
#include "traitlab/synthetic.hpp"
#include "traitlab/text.hpp"
#include "traitlab/textstats.hpp"
#include "traitlab/tinylm.hpp"
#include "traitlab/tinylm_train.hpp"
#include "traitlab/trait.hpp"
#include "traitlab/unicode.hpp"
