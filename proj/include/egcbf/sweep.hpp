#pragma once

// Zero-shot scalability sweeps: evaluate policies across swarm sizes, emit a
// deterministic CSV (fixed header and formatting), a JSON mirror and an
// optional SVG of safety rate vs swarm size.

#include <string>
#include <vector>

#include "egcbf/harness.hpp"

namespace egcbf {

struct SweepSpec {
  std::string checkpoint;         // required by the "learned" method
  std::vector<std::string> methods{"learned"};
  std::vector<int> sizes{8, 16, 32};
  double side_length = 4.0;
  int num_obstacles = 0;
  int episodes = 50;
  uint64_t seed_base = 0;
  WorldConfig base;  // remaining world parameters
  ModelParams model;
  int jobs = 1;
};

struct SweepRow {
  std::string method;
  int agents = 0;
  double density = 0.0;
  double safe = 0.0, reach = 0.0, succ = 0.0;
  double cost_mean = 0.0, cost_p25 = 0.0, cost_p75 = 0.0;
  double reward = 0.0;
};

std::vector<SweepRow> run_sweep(const SweepSpec& spec);

/// Fixed header: method,N,density,safe,reach,succ,cost_mean,cost_p25,cost_p75,reward
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_json(const std::vector<SweepRow>& rows);
std::string sweep_svg(const std::vector<SweepRow>& rows);

/// Linear-interpolation percentile (q in [0,1]) of a sample.
double percentile(std::vector<double> values, double q);

}  // namespace egcbf
