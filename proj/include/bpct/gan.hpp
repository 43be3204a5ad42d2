#pragma once

#include "bpct/gan/checkpoint.hpp"
#include "bpct/gan/losses.hpp"
#include "bpct/gan/models.hpp"
