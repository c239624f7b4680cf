#ifndef ALIGNMAP_ALIGNMAP_HPP
#define ALIGNMAP_ALIGNMAP_HPP

/**
 * @file alignmap.hpp
 *
 * @brief Umbrella header for the projection engine (without the service and CLI).
 */

#include "bundle.hpp"
#include "curve.hpp"
#include "fuzzy.hpp"
#include "ingest.hpp"
#include "knn.hpp"
#include "layout.hpp"
#include "metrics.hpp"
#include "spectral.hpp"

#endif
