#pragma once

#include "sparc/analysis.hpp"
#include "sparc/attention.hpp"
#include "sparc/checksum.hpp"
#include "sparc/decoder.hpp"
#include "sparc/errors.hpp"
#include "sparc/harness.hpp"
#include "sparc/intervention.hpp"
#include "sparc/kv_cache.hpp"
#include "sparc/model.hpp"
#include "sparc/rng.hpp"
#include "sparc/stdf.hpp"
#include "sparc/tensor.hpp"
#include "sparc/trace.hpp"
