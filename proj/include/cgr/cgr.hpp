#pragma once

#include "cgr/errors.hpp"
#include "cgr/tensor.hpp"
#include "cgr/autodiff.hpp"
#include "cgr/nn.hpp"
#include "cgr/causal_blocks.hpp"
#include "cgr/routing.hpp"
#include "cgr/scm.hpp"
#include "cgr/taskgen.hpp"
#include "cgr/io.hpp"
#include "cgr/harness.hpp"
