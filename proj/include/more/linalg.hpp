#pragma once

#include "more/linalg/kdtree.hpp"
#include "more/linalg/matrix.hpp"
#include "more/linalg/rotation.hpp"
#include "more/linalg/svd3.hpp"
#include "more/linalg/vec3.hpp"
