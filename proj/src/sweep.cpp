#include "egcbf/sweep.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <future>
#include <stdexcept>

#include <json.hpp>

#include "egcbf/learn.hpp"

namespace egcbf {

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = static_cast<size_t>(std::ceil(pos));
  const double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace {

std::unique_ptr<Policy> make_method(const std::string& method, const SweepSpec& spec,
                                    const WorldConfig& cfg, const NetParams* learned) {
  if (method == "learned") {
    if (!learned) throw std::runtime_error("sweep: method 'learned' needs a checkpoint");
    return make_learned_policy(*learned);
  }
  if (method == "nominal") return make_nominal_policy(spec.model);
  if (method == "ccbf") return make_ccbf_policy(spec.model, cfg);
  if (method == "dcbf") return make_dcbf_policy(spec.model, cfg);
  throw std::runtime_error("sweep: unknown method " + method);
}

}  // namespace

std::vector<SweepRow> run_sweep(const SweepSpec& spec) {
  if (spec.episodes < 1) throw std::invalid_argument("sweep: episodes must be >= 1");
  std::optional<NetParams> learned;
  if (std::find(spec.methods.begin(), spec.methods.end(), "learned") != spec.methods.end()) {
    const TrainState ts = load_train_state(spec.checkpoint);
    learned = ts.policy;
  }

  std::vector<SweepRow> rows;
  for (const std::string& method : spec.methods) {
    for (const int n : spec.sizes) {
      WorldConfig cfg = spec.base;
      cfg.num_agents = n;
      cfg.side_length = spec.side_length;
      cfg.num_obstacles = spec.num_obstacles;

      std::vector<EpisodeMetrics> metrics(spec.episodes);
      const auto worker = [&](int e) {
        auto policy = make_method(method, spec, cfg, learned ? &*learned : nullptr);
        Rng seed_rng(spec.seed_base ^ (0x100000001b3ULL * static_cast<uint64_t>(e + 1)));
        return run_episode(*policy, cfg, spec.model, seed_rng.next_u64());
      };
      if (spec.jobs > 1) {
        std::vector<std::future<EpisodeMetrics>> futures;
        futures.reserve(spec.episodes);
        for (int e = 0; e < spec.episodes; ++e)
          futures.push_back(std::async(std::launch::async, worker, e));
        for (int e = 0; e < spec.episodes; ++e) metrics[e] = futures[e].get();
      } else {
        for (int e = 0; e < spec.episodes; ++e) metrics[e] = worker(e);
      }

      SweepRow row;
      row.method = method;
      row.agents = n;
      row.density = static_cast<double>(n) / std::pow(spec.side_length, 3);
      std::vector<double> costs;
      for (const auto& m : metrics) {
        row.safe += m.safety_rate;
        row.reach += m.reach_rate;
        row.succ += m.success_rate;
        row.cost_mean += m.cost;
        row.reward += m.reward;
        costs.push_back(m.cost);
      }
      const double inv = 1.0 / spec.episodes;
      row.safe *= inv;
      row.reach *= inv;
      row.succ *= inv;
      row.cost_mean *= inv;
      row.reward *= inv;
      row.cost_p25 = percentile(costs, 0.25);
      row.cost_p75 = percentile(costs, 0.75);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::string out = "method,N,density,safe,reach,succ,cost_mean,cost_p25,cost_p75,reward\n";
  char line[320];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%s,%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  r.method.c_str(), r.agents, r.density, r.safe, r.reach, r.succ,
                  r.cost_mean, r.cost_p25, r.cost_p75, r.reward);
    out += line;
  }
  return out;
}

std::string sweep_json(const std::vector<SweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"method", r.method},
                 {"N", r.agents},
                 {"density", r.density},
                 {"safe", r.safe},
                 {"reach", r.reach},
                 {"succ", r.succ},
                 {"cost_mean", r.cost_mean},
                 {"cost_p25", r.cost_p25},
                 {"cost_p75", r.cost_p75},
                 {"reward", r.reward}});
  }
  return j.dump(2) + "\n";
}

std::string sweep_svg(const std::vector<SweepRow>& rows) {
  // Safety rate vs swarm size, one polyline per method.
  constexpr int W = 640, H = 400, ML = 60, MR = 20, MT = 20, MB = 50;
  std::vector<std::string> methods;
  std::vector<int> sizes;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(sizes.begin(), sizes.end(), r.agents) == sizes.end())
      sizes.push_back(r.agents);
  }
  std::sort(sizes.begin(), sizes.end());
  const double x0 = std::log2(static_cast<double>(sizes.front()));
  const double x1 = std::log2(static_cast<double>(sizes.back() == sizes.front()
                                                      ? sizes.front() * 2
                                                      : sizes.back()));
  const auto px = [&](int n) {
    const double t = (std::log2(static_cast<double>(n)) - x0) / (x1 - x0);
    return ML + t * (W - ML - MR);
  };
  const auto py = [&](double rate) { return MT + (1.0 - rate) * (H - MT - MB); };

  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"};
  std::string svg = "<svg xmlns='http://www.w3.org/2000/svg' width='" + std::to_string(W) +
                    "' height='" + std::to_string(H) + "'>\n";
  svg += "<rect width='100%' height='100%' fill='white'/>\n";
  char buf[256];
  for (double tick = 0.0; tick <= 1.001; tick += 0.25) {
    std::snprintf(buf, sizeof(buf),
                  "<line x1='%d' y1='%.1f' x2='%d' y2='%.1f' stroke='#ddd'/>"
                  "<text x='%d' y='%.1f' font-size='12' text-anchor='end'>%.2f</text>\n",
                  ML, py(tick), W - MR, py(tick), ML - 6, py(tick) + 4, tick);
    svg += buf;
  }
  for (const int n : sizes) {
    std::snprintf(buf, sizeof(buf),
                  "<text x='%.1f' y='%d' font-size='12' text-anchor='middle'>%d</text>\n",
                  px(n), H - MB + 18, n);
    svg += buf;
  }
  int ci = 0;
  for (const auto& method : methods) {
    std::string points;
    for (const auto& r : rows) {
      if (r.method != method) continue;
      std::snprintf(buf, sizeof(buf), "%.1f,%.1f ", px(r.agents), py(r.safe));
      points += buf;
    }
    const char* color = colors[ci % 5];
    svg += "<polyline fill='none' stroke='" + std::string(color) + "' stroke-width='2' points='" +
           points + "'/>\n";
    std::snprintf(buf, sizeof(buf),
                  "<text x='%d' y='%d' font-size='13' fill='%s'>%s</text>\n", W - MR - 120,
                  MT + 18 * (ci + 1), color, method.c_str());
    svg += buf;
    ++ci;
  }
  std::snprintf(buf, sizeof(buf),
                "<text x='%d' y='%d' font-size='13' text-anchor='middle'>swarm size</text>"
                "<text x='16' y='%d' font-size='13' transform='rotate(-90 16 %d)'>safety"
                " rate</text>\n",
                (ML + W - MR) / 2, H - 12, H / 2, H / 2);
  svg += buf;
  svg += "</svg>\n";
  return svg;
}

}  // namespace egcbf
