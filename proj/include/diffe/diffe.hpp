#pragma once

#include "diffe/checkpoint.hpp"
#include "diffe/common.hpp"
#include "diffe/config.hpp"
#include "diffe/data.hpp"
#include "diffe/diffusion.hpp"
#include "diffe/eval.hpp"
#include "diffe/networks.hpp"
#include "diffe/ops.hpp"
#include "diffe/optim.hpp"
#include "diffe/sigproc.hpp"
#include "diffe/tensor.hpp"
#include "diffe/training.hpp"
