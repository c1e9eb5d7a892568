#pragma once

#include "koop/adam.hpp"
#include "koop/binio.hpp"
#include "koop/checkpoint.hpp"
#include "koop/dataset.hpp"
#include "koop/error.hpp"
#include "koop/evalkit.hpp"
#include "koop/model.hpp"
#include "koop/netblocks.hpp"
#include "koop/params.hpp"
#include "koop/rng.hpp"
#include "koop/simwell.hpp"
#include "koop/tape.hpp"
#include "koop/tensor.hpp"
#include "koop/trainer.hpp"
