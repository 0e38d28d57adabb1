//
// Copyright 2026 The TUL Authors.
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
//

#ifndef TUL_TUL_HPP_
#define TUL_TUL_HPP_

#include "tul/binary_io.hpp"
#include "tul/config.hpp"
#include "tul/dataset.hpp"
#include "tul/error.hpp"
#include "tul/eval.hpp"
#include "tul/explain.hpp"
#include "tul/format.hpp"
#include "tul/graph.hpp"
#include "tul/network.hpp"
#include "tul/rng.hpp"
#include "tul/tensor.hpp"
#include "tul/unlearn.hpp"

#endif  // TUL_TUL_HPP_
