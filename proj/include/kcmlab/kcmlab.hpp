#pragma once

// Everything in one include.

#include "kcmlab/error.hpp"
#include "kcmlab/rng.hpp"
#include "kcmlab/model.hpp"
#include "kcmlab/model_io.hpp"
#include "kcmlab/zoo.hpp"
#include "kcmlab/random_model.hpp"
#include "kcmlab/closure.hpp"
#include "kcmlab/component.hpp"
#include "kcmlab/spectral.hpp"
#include "kcmlab/bounds.hpp"
#include "kcmlab/testfn.hpp"
#include "kcmlab/block.hpp"
#include "kcmlab/dynamics.hpp"
#include "kcmlab/coupling.hpp"
#include "kcmlab/experiment.hpp"
