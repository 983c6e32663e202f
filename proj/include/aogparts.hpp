#pragma once

#include "aogparts/annotation.hpp"
#include "aogparts/errors.hpp"
#include "aogparts/evaluator.hpp"
#include "aogparts/feature_volume.hpp"
#include "aogparts/geometry.hpp"
#include "aogparts/miner.hpp"
#include "aogparts/model.hpp"
#include "aogparts/parser.hpp"
#include "aogparts/synth.hpp"
