#pragma once
// Convenience umbrella for the whole library.

#include "ghnn/clstm.hpp"
#include "ghnn/common.hpp"
#include "ghnn/config.hpp"
#include "ghnn/dataset.hpp"
#include "ghnn/evaluation.hpp"
#include "ghnn/model.hpp"
#include "ghnn/quadrature.hpp"
#include "ghnn/rng.hpp"
#include "ghnn/serialize.hpp"
#include "ghnn/synth.hpp"
#include "ghnn/tape.hpp"
#include "ghnn/tensor.hpp"
#include "ghnn/training.hpp"
