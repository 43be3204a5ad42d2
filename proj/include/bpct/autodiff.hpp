#pragma once

#include "bpct/autodiff/engine.hpp"
#include "bpct/autodiff/gradcheck.hpp"
#include "bpct/autodiff/op_kinds.hpp"
#include "bpct/autodiff/tensor.hpp"
