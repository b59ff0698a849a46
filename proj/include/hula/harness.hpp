#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hula/agent.hpp"
#include "hula/oracle.hpp"

namespace hula {

struct SweepPoint {
  double param_value = 0.0;  // epsilon or c
  double mean_expert_calls = 0.0;
  double mean_return = 0.0;
  double return_stderr = 0.0;
  int episodes = 0;
};

/// Ordered key/value header written at the top of every exported file.
using Metadata = std::vector<std::pair<std::string, std::string>>;
std::string metadata_value(const Metadata& meta, const std::string& key);

SweepPoint summarize(double param_value, const std::vector<EpisodeTrace>& traces);

/// n thresholds geometrically spaced from 1e-3 to max_variance.
std::vector<double> default_eps_grid(double max_variance, int n = 20);
std::vector<double> default_penalty_grid();

/// Largest greedy-action variance over the keys of a table.
double max_table_variance(const QTable& q, const QTable& m);

/// Every point is evaluated on the same episode seed set, so points differ only
/// through epsilon. Output is ordered by mean_expert_calls ascending (stable).
std::vector<SweepPoint> sweep_threshold(const QTable& q, const QTable& m, const GridMap& map,
                                        const EnvParams& params, ObsMode mode, const ExpertPolicy& expert,
                                        const std::vector<double>& eps_grid, int episodes, std::uint64_t seed);

struct PenaltySweep {
  std::vector<SweepPoint> points;                // ordered by mean_expert_calls ascending
  std::vector<std::uint64_t> training_calls;     // per c, in c_grid order
  std::uint64_t total_training_calls = 0;
};

/// Trains one penalty agent per c (training seed derived from the base seed
/// by point index) and evaluates each without the penalty.
PenaltySweep sweep_penalty(const GridMap& map, const EnvParams& params, const std::vector<double>& c_grid,
                           const PenaltyConfig& pcfg, const ExpertPolicy& expert, ObsMode mode, int episodes,
                           std::uint64_t seed);

/// Trailing mean over `window` consecutive points of every coordinate;
/// returns len - window + 1 points (none when window > len).
std::vector<SweepPoint> rolling_mean(const std::vector<SweepPoint>& points, int window = 4);

// ---------------------------------------------------------------- export

/// CSV with `# key: value` header lines, then `param,calls,return,stderr,episodes`.
void write_curve(std::ostream& out, const std::vector<SweepPoint>& points, const Metadata& meta);
void write_curve(const std::string& path, const std::vector<SweepPoint>& points, const Metadata& meta);
std::pair<std::vector<SweepPoint>, Metadata> read_curve(std::istream& in);
std::pair<std::vector<SweepPoint>, Metadata> read_curve(const std::string& path);

/// Grid text in map orientation: one row per map row, space-separated cells,
/// `#` outside the domain. Monte-Carlo maps append a second grid of standard errors.
void write_variance_map(std::ostream& out, const VarianceMap& vm, const Metadata& meta);
void write_variance_map(const std::string& path, const VarianceMap& vm, const Metadata& meta);
std::pair<VarianceMap, Metadata> read_variance_map(std::istream& in);
std::pair<VarianceMap, Metadata> read_variance_map(const std::string& path);

/// JSON-lines trace: a header record, one record per step, a summary record.
nlohmann::json step_to_json(const TraceStep& s);
nlohmann::json trace_summary_json(const EpisodeTrace& t);
void write_trace(std::ostream& out, const EpisodeTrace& trace, const Metadata& meta);
void write_trace(const std::string& path, const EpisodeTrace& trace, const Metadata& meta);
EpisodeTrace read_trace(std::istream& in);

// ---------------------------------------------------------------- config files

/// `key = value` lines under `[section]` headers; `#` and `;` start comments.
/// Keys come back as "section.key" (bare "key" before any section).
std::map<std::string, std::string> parse_config(std::string_view text);
std::map<std::string, std::string> load_config(const std::string& path);

}  // namespace hula
