#pragma once

#include "seornet/core.hpp"
#include "seornet/autodiff.hpp"
#include "seornet/geometry.hpp"
#include "seornet/params.hpp"
#include "seornet/config.hpp"
#include "seornet/backbone.hpp"
#include "seornet/orientation.hpp"
#include "seornet/model.hpp"
#include "seornet/self_ensembling.hpp"
#include "seornet/objectives.hpp"
#include "seornet/data_synth.hpp"
#include "seornet/training.hpp"
#include "seornet/evaluation.hpp"
