#include "fisherpde/common.hpp"

#include <omp.h>

namespace fisherpde {

namespace {
int g_workers = 0;
}

void set_worker_count(int workers) {
  if (workers < 0) throw std::invalid_argument("worker count must be >= 0");
  g_workers = workers;
  if (workers > 0) omp_set_num_threads(workers);
}

int worker_count() { return g_workers > 0 ? g_workers : omp_get_max_threads(); }

}  // namespace fisherpde
