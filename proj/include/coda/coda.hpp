#pragma once

#include "coda/errors.hpp"
#include "coda/geometry.hpp"
#include "coda/vocabulary.hpp"
#include "coda/world.hpp"
#include "coda/encoders.hpp"
#include "coda/detector.hpp"
#include "coda/matching.hpp"
#include "coda/discovery.hpp"
#include "coda/alignment.hpp"
#include "coda/eval.hpp"
#include "coda/trainer.hpp"
#include "coda/io.hpp"
#include "coda/plot.hpp"
