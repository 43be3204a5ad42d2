#pragma once

#include "bpct/trainkit/config.hpp"
#include "bpct/trainkit/dataset.hpp"
#include "bpct/trainkit/evaluate.hpp"
#include "bpct/trainkit/metrics.hpp"
#include "bpct/trainkit/optim.hpp"
#include "bpct/trainkit/train.hpp"
