#pragma once

#include "slcrf/autoencoder.hpp"
#include "slcrf/checkpoint.hpp"
#include "slcrf/crf.hpp"
#include "slcrf/data.hpp"
#include "slcrf/eval.hpp"
#include "slcrf/gradcheck.hpp"
#include "slcrf/layers.hpp"
#include "slcrf/numerics.hpp"
#include "slcrf/optimizer.hpp"
#include "slcrf/parallel.hpp"
#include "slcrf/relations.hpp"
#include "slcrf/rng.hpp"
#include "slcrf/tensor.hpp"
