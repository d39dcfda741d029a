#pragma once

#include "gfmstab/error.hpp"
#include "gfmstab/core.hpp"
#include "gfmstab/network.hpp"
#include "gfmstab/sources.hpp"
#include "gfmstab/loads.hpp"
#include "gfmstab/system.hpp"
#include "gfmstab/smallsignal.hpp"
#include "gfmstab/continuation.hpp"
#include "gfmstab/timedomain.hpp"
#include "gfmstab/config.hpp"
#include "gfmstab/io.hpp"
