#pragma once

// Single include point for cpp-httplib. glibc's <resolv.h> (included by
// httplib) leaks a `_res` object-like macro that mangles any later
// declaration using that identifier (Eigen has several); undo it here.

#include "httplib.h"

#ifdef _res
#undef _res
#endif
#ifdef res
#undef res
#endif
