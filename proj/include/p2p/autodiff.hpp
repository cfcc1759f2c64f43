#pragma once

#include "p2p/autodiff/grad_check.hpp"
#include "p2p/autodiff/ops.hpp"
#include "p2p/autodiff/tensor.hpp"
