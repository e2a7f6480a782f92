// SPDX-License-Identifier: Apache-2.0
#include "corda/artifacts.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace corda {

using nlohmann::json;

namespace {

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void save_candidates(const CandidateTable& table,
                     const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["layers"] = json::array();
  for (const auto& row : table) {
    json entry;
    entry["name"] = row.front().layer_name;
    entry["token_counts"] = json::array();
    for (const auto& cov : row) {
      entry["token_counts"].push_back(cov.token_count);
      save_cord1(cov.c, dir / (cov.layer_name + ".round" +
                               std::to_string(cov.round_index) + ".cov"));
    }
    manifest["layers"].push_back(std::move(entry));
  }
  manifest["n_rounds"] = table.empty() ? 0 : table.front().size();
  write_json(manifest, dir / "manifest.json");
}

CandidateTable load_candidates(const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  const std::size_t n_rounds = manifest.at("n_rounds").get<std::size_t>();
  CandidateTable table;
  for (const auto& entry : manifest.at("layers")) {
    const auto name = entry.at("name").get<std::string>();
    std::vector<CovarianceStats> row;
    for (std::size_t k = 0; k < n_rounds; ++k) {
      CovarianceStats cov;
      cov.layer_name = name;
      cov.round_index = k;
      cov.token_count = entry.at("token_counts").at(k).get<std::size_t>();
      cov.c = load_cord1(dir / (name + ".round" + std::to_string(k) + ".cov"));
      row.push_back(std::move(cov));
    }
    table.push_back(std::move(row));
  }
  return table;
}

void save_selection(const SelectionResult& sel,
                    const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["chosen_round"] = json::array();
  for (std::size_t l = 0; l < sel.selected.size(); ++l) {
    j["chosen_round"].push_back({{"layer", sel.selected[l].layer_name},
                                 {"round", sel.chosen_round[l]}});
  }
  write_json(j, dir / "selection.json");
  write_selection_csv(sel.table, dir / "cov_scores.csv");
}

std::vector<std::size_t> load_selection(const std::filesystem::path& dir) {
  const json j = read_json(dir / "selection.json");
  std::vector<std::size_t> rounds;
  for (const auto& entry : j.at("chosen_round")) {
    rounds.push_back(entry.at("round").get<std::size_t>());
  }
  return rounds;
}

void write_selection_csv(const std::vector<ScoreRecord>& table,
                         const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "layer,round,pi,cov_score\n";
  for (const auto& rec : table) {
    out << rec.layer_name << ',' << rec.round_index << ',' << rec.pi << ','
        << rec.cov_score << '\n';
  }
}

void save_decompositions(const std::vector<Decomposition>& decomps,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["layers"] = json::array();
  for (const auto& d : decomps) {
    manifest["layers"].push_back({{"name", d.layer_name},
                                  {"d_out", d.d_out()},
                                  {"d_in", d.d_in()},
                                  {"rank", d.rank},
                                  {"coefficient", d.reg.coefficient},
                                  {"residual_norm", d.reg.residual_norm}});
    save_cord1(d.u, dir / (d.layer_name + ".u"));
    Matrix sigma(d.rank, 1);
    for (std::size_t i = 0; i < d.rank; ++i) sigma(i, 0) = d.sigma[i];
    save_cord1(sigma, dir / (d.layer_name + ".sigma"));
    save_cord1(d.vt_cinv, dir / (d.layer_name + ".vt_cinv"));
    save_cord1(d.reg.c_reg, dir / (d.layer_name + ".c_reg"));
  }
  write_json(manifest, dir / "manifest.json");
}

std::vector<Decomposition> load_decompositions(
    const std::filesystem::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  std::vector<Decomposition> decomps;
  for (const auto& entry : manifest.at("layers")) {
    Decomposition d;
    d.layer_name = entry.at("name").get<std::string>();
    d.rank = entry.at("rank").get<std::size_t>();
    d.reg.coefficient = entry.at("coefficient").get<double>();
    d.reg.residual_norm = entry.at("residual_norm").get<double>();
    d.u = load_cord1(dir / (d.layer_name + ".u"));
    const Matrix sigma = load_cord1(dir / (d.layer_name + ".sigma"));
    if (sigma.rows() != d.rank || sigma.cols() != 1) {
      throw IoError("bad sigma shape for " + d.layer_name);
    }
    d.sigma.resize(d.rank);
    for (std::size_t i = 0; i < d.rank; ++i) d.sigma[i] = sigma(i, 0);
    d.vt_cinv = load_cord1(dir / (d.layer_name + ".vt_cinv"));
    d.reg.c_reg = load_cord1(dir / (d.layer_name + ".c_reg"));
    if (d.u.rows() != entry.at("d_out").get<std::size_t>() ||
        d.vt_cinv.cols() != entry.at("d_in").get<std::size_t>()) {
      throw IoError("decomposition dims disagree with manifest for " +
                    d.layer_name);
    }
    decomps.push_back(std::move(d));
  }
  return decomps;
}

void save_allocation(const RankAllocation& alloc,
                     const std::filesystem::path& path) {
  json j;
  j["mode"] = to_string(alloc.mode);
  j["budget"] = alloc.budget;
  j["realized"] = alloc.realized;
  j["r_per_layer"] = json::object();
  for (const auto& [layer, r] : alloc.r_per_layer) {
    j["r_per_layer"][layer] = r;
  }
  write_json(j, path);
}

RankAllocation load_allocation(const std::filesystem::path& path) {
  const json j = read_json(path);
  RankAllocation alloc;
  alloc.mode = adapt_mode_from_string(j.at("mode").get<std::string>());
  alloc.budget = j.at("budget").get<std::size_t>();
  alloc.realized = j.at("realized").get<std::size_t>();
  for (const auto& [layer, r] : j.at("r_per_layer").items()) {
    alloc.r_per_layer[layer] = r.get<std::size_t>();
  }
  return alloc;
}

void write_allocation_csv(const std::vector<AllocationStep>& trace,
                          const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,layer,r,score\n";
  for (const auto& step : trace) {
    out << step.step << ',' << step.layer_name << ',' << step.r << ','
        << step.score << '\n';
  }
}

namespace {

void write_trace_csv(const std::vector<double>& trace,
                     const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "step,loss\n";
  for (std::size_t i = 0; i < trace.size(); ++i) {
    out << i << ',' << trace[i] << '\n';
  }
}

std::vector<double> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<double> trace;
  while (std::getline(in, line)) {
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw IoError("bad trace row in " + path.string());
    }
    trace.push_back(std::stod(line.substr(comma + 1)));
  }
  return trace;
}

}  // namespace

void save_report(const ExperimentReport& report,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json j;
  j["seed"] = report.seed;
  j["budget"] = report.budget;
  j["knowledge_base_loss"] = report.knowledge_base_loss;
  j["new_task_base_loss"] = report.new_task_base_loss;
  j["wall_seconds"] = report.wall_seconds;
  j["arms"] = json::array();
  write_trace_csv(report.pretrain_trace, dir / "pretrain_trace.csv");
  for (const auto& arm : report.arms) {
    const std::string name = to_string(arm.kind);
    json a;
    a["name"] = name;
    a["knowledge_before"] = arm.knowledge_before;
    a["knowledge_after"] = arm.knowledge_after;
    a["new_task_final"] = arm.new_task_final;
    a["diverged"] = arm.diverged;
    a["failed_stage"] = arm.failed_stage;
    a["wall_seconds"] = arm.wall_seconds;
    a["rank_per_layer"] = json::object();
    for (const auto& [layer, r] : arm.rank_per_layer) {
      a["rank_per_layer"][layer] = r;
    }
    a["trace_file"] = "trace_" + name + ".csv";
    write_trace_csv(arm.loss_trace, dir / ("trace_" + name + ".csv"));
    j["arms"].push_back(std::move(a));
  }
  j["truncation_curves"] = json::array();
  j["untruncated_loss"] = report.truncation_curves.untruncated_loss;
  for (const auto& point : report.truncation_curves.points) {
    json p;
    p["ratio"] = point.ratio;
    for (const auto& [method, loss] : point.loss_by_method) {
      p[method] = loss;
    }
    j["truncation_curves"].push_back(std::move(p));
  }
  if (!report.truncation_curves.points.empty()) {
    write_compactness_csv(report.truncation_curves,
                          dir / "compactness.csv");
  }
  if (!report.selection_table.empty()) {
    write_selection_csv(report.selection_table, dir / "cov_scores.csv");
  }
  if (!report.allocation_trace.empty()) {
    write_allocation_csv(report.allocation_trace, dir / "alloc_trace.csv");
  }
  write_json(j, dir / "report.json");
}

ExperimentReport load_report(const std::filesystem::path& dir) {
  const json j = read_json(dir / "report.json");
  ExperimentReport report;
  report.seed = j.at("seed").get<std::uint64_t>();
  report.budget = j.at("budget").get<std::size_t>();
  report.knowledge_base_loss = j.at("knowledge_base_loss").get<double>();
  report.new_task_base_loss = j.at("new_task_base_loss").get<double>();
  report.wall_seconds = j.at("wall_seconds").get<double>();
  report.pretrain_trace = read_trace_csv(dir / "pretrain_trace.csv");
  for (const auto& a : j.at("arms")) {
    ArmReport arm;
    arm.kind = arm_from_string(a.at("name").get<std::string>());
    arm.knowledge_before = a.at("knowledge_before").get<double>();
    arm.knowledge_after = a.at("knowledge_after").get<double>();
    arm.new_task_final = a.at("new_task_final").get<double>();
    arm.diverged = a.at("diverged").get<bool>();
    arm.failed_stage = a.at("failed_stage").get<std::string>();
    arm.wall_seconds = a.at("wall_seconds").get<double>();
    for (const auto& [layer, r] : a.at("rank_per_layer").items()) {
      arm.rank_per_layer[layer] = r.get<std::size_t>();
    }
    arm.loss_trace =
        read_trace_csv(dir / a.at("trace_file").get<std::string>());
    report.arms.push_back(std::move(arm));
  }
  report.truncation_curves.untruncated_loss =
      j.at("untruncated_loss").get<double>();
  for (const auto& p : j.at("truncation_curves")) {
    CompactnessPoint point;
    for (const auto& [key, value] : p.items()) {
      if (key == "ratio") {
        point.ratio = value.get<double>();
      } else {
        point.loss_by_method[key] = value.get<double>();
      }
    }
    report.truncation_curves.points.push_back(std::move(point));
  }
  return report;
}

void write_compactness_csv(const CompactnessCurves& curves,
                           const std::filesystem::path& path) {
  auto out = open_csv(path);
  out << "ratio";
  if (!curves.points.empty()) {
    for (const auto& [method, loss] : curves.points.front().loss_by_method) {
      (void)loss;
      out << ',' << method;
    }
  }
  out << '\n';
  for (const auto& point : curves.points) {
    out << point.ratio;
    for (const auto& [method, loss] : point.loss_by_method) {
      (void)method;
      out << ',' << loss;
    }
    out << '\n';
  }
}

}  // namespace corda
