#pragma once

#include "geofl/checkpoint.hpp"
#include "geofl/clustering.hpp"
#include "geofl/datasets.hpp"
#include "geofl/errors.hpp"
#include "geofl/experiment.hpp"
#include "geofl/fedavg.hpp"
#include "geofl/learner.hpp"
#include "geofl/metrics_csv.hpp"
#include "geofl/rng.hpp"
#include "geofl/selection.hpp"
#include "geofl/spatial_partition.hpp"
