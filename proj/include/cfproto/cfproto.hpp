/*
 * Copyright 2026 The cfproto Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "cfproto/adam.hpp"
#include "cfproto/catembed.hpp"
#include "cfproto/cfsearch.hpp"
#include "cfproto/checkpoint.hpp"
#include "cfproto/dataio.hpp"
#include "cfproto/error.hpp"
#include "cfproto/harness.hpp"
#include "cfproto/metrics.hpp"
#include "cfproto/models.hpp"
#include "cfproto/ndkernel.hpp"
#include "cfproto/proto.hpp"
#include "cfproto/rng.hpp"
#include "cfproto/synthetic.hpp"
