// Umbrella header.
#pragma once

#include "aggcn/checkpoint.hpp"
#include "aggcn/common.hpp"
#include "aggcn/data.hpp"
#include "aggcn/depgraph.hpp"
#include "aggcn/gradcheck.hpp"
#include "aggcn/layers.hpp"
#include "aggcn/model.hpp"
#include "aggcn/rng.hpp"
#include "aggcn/tensor.hpp"
#include "aggcn/train.hpp"
