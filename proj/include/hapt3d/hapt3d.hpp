#pragma once

#include "hapt3d/augment.hpp"
#include "hapt3d/autograd.hpp"
#include "hapt3d/checkpoint.hpp"
#include "hapt3d/cloud.hpp"
#include "hapt3d/config.hpp"
#include "hapt3d/error.hpp"
#include "hapt3d/grid.hpp"
#include "hapt3d/hdbscan.hpp"
#include "hapt3d/instances.hpp"
#include "hapt3d/loss.hpp"
#include "hapt3d/matrix.hpp"
#include "hapt3d/metrics.hpp"
#include "hapt3d/network.hpp"
#include "hapt3d/orchard.hpp"
#include "hapt3d/parallel.hpp"
#include "hapt3d/ply.hpp"
#include "hapt3d/random.hpp"
#include "hapt3d/sparse.hpp"
#include "hapt3d/train.hpp"
#include "hapt3d/voxelize.hpp"
