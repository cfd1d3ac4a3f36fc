#pragma once

#include "gcs/compensated.hpp"
#include "gcs/ensembles.hpp"
#include "gcs/errors.hpp"
#include "gcs/fock.hpp"
#include "gcs/laguerre.hpp"
#include "gcs/metrology.hpp"
#include "gcs/parallel.hpp"
#include "gcs/scan.hpp"
#include "gcs/wigner.hpp"
