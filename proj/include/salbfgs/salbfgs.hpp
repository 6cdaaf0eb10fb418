#pragma once

#include "salbfgs/cost.hpp"
#include "salbfgs/ctr.hpp"
#include "salbfgs/driver.hpp"
#include "salbfgs/evaluation.hpp"
#include "salbfgs/forgetting.hpp"
#include "salbfgs/hashing.hpp"
#include "salbfgs/lbfgs.hpp"
#include "salbfgs/model_io.hpp"
#include "salbfgs/online.hpp"
#include "salbfgs/reservoir.hpp"
#include "salbfgs/rng.hpp"
#include "salbfgs/synth.hpp"
#include "salbfgs/text_format.hpp"
#include "salbfgs/types.hpp"
#include "salbfgs/vec.hpp"
