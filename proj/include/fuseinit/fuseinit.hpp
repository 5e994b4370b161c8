#pragma once

#include "fuseinit/error.hpp"
#include "fuseinit/linalg.hpp"
#include "fuseinit/nn.hpp"
#include "fuseinit/data.hpp"
#include "fuseinit/init.hpp"
#include "fuseinit/train.hpp"
#include "fuseinit/moments.hpp"
#include "fuseinit/fusion.hpp"
#include "fuseinit/oracle.hpp"
#include "fuseinit/serialize.hpp"
#include "fuseinit/pipeline.hpp"
