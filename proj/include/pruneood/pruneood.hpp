#pragma once

// Umbrella header.

#include "pruneood/autodiff.hpp"
#include "pruneood/cli.hpp"
#include "pruneood/config.hpp"
#include "pruneood/encoder.hpp"
#include "pruneood/errors.hpp"
#include "pruneood/gradsuite.hpp"
#include "pruneood/graph.hpp"
#include "pruneood/losses.hpp"
#include "pruneood/metrics.hpp"
#include "pruneood/optim.hpp"
#include "pruneood/rng.hpp"
#include "pruneood/selector.hpp"
#include "pruneood/svg.hpp"
#include "pruneood/synth.hpp"
#include "pruneood/trainer.hpp"
