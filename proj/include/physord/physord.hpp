#pragma once

#include "physord/autodiff.hpp"
#include "physord/baselines.hpp"
#include "physord/datagen.hpp"
#include "physord/dataset_io.hpp"
#include "physord/errors.hpp"
#include "physord/evaluation.hpp"
#include "physord/integrator.hpp"
#include "physord/liegroup.hpp"
#include "physord/linalg.hpp"
#include "physord/mlp.hpp"
#include "physord/models.hpp"
#include "physord/parallel.hpp"
#include "physord/serialize.hpp"
#include "physord/training.hpp"
#include "physord/types.hpp"
