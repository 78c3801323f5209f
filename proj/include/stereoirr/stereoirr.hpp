// Copyright 2026 The StereoIRR Authors. All Rights Reserved.
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

#include "stereoirr/checkpoint.hpp"
#include "stereoirr/config.hpp"
#include "stereoirr/dma.hpp"
#include "stereoirr/grad_check.hpp"
#include "stereoirr/image.hpp"
#include "stereoirr/losses.hpp"
#include "stereoirr/metrics.hpp"
#include "stereoirr/model.hpp"
#include "stereoirr/nn.hpp"
#include "stereoirr/ops.hpp"
#include "stereoirr/optim.hpp"
#include "stereoirr/rng.hpp"
#include "stereoirr/synth.hpp"
#include "stereoirr/tensor.hpp"
#include "stereoirr/train.hpp"
