// divlab: command-line laboratory for distillation divergence objectives.
//
// Subcommands: fit, gradcheck, decompose, mixture, rho, evaltext.
// Exit codes: 0 success, 1 check/assertion failure, 2 usage/config error,
// 3 run divergence. DIVLAB_OUT sets the default output directory.

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "divlab/config.hpp"
#include "divlab/csv.hpp"
#include "divlab/distributions.hpp"
#include "divlab/gradients.hpp"
#include "divlab/objectives.hpp"
#include "divlab/textmetrics.hpp"
#include "divlab/toy_lab.hpp"

namespace fs = std::filesystem;
using divlab::csv::format_double;

namespace {

std::string resolve_out_dir(const std::string& flag, const std::string& cfg) {
  if (!flag.empty()) return flag;
  if (!cfg.empty()) return cfg;
  if (const char* env = std::getenv("DIVLAB_OUT"); env && *env) return env;
  return ".";
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

void finish_output(std::ofstream& out, const fs::path& path) {
  out.flush();
  if (!out) throw std::runtime_error("failed while writing " + path.string());
}

std::vector<double> read_vector_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open vector file: " + path);
  std::vector<double> values;
  double v;
  while (in >> v) values.push_back(v);
  if (!in.eof()) {
    std::string tok;
    in.clear();
    in >> tok;
    throw std::invalid_argument(path + ": malformed number near '" + tok + "'");
  }
  if (values.size() < 2)
    throw std::invalid_argument(path + ": need at least 2 entries");
  return values;
}

struct ObjectiveOverrides {
  std::optional<std::string> kind;
  std::optional<double> alpha, beta, gamma, lambda;
  std::optional<std::uint64_t> seed;
};

void apply_overrides(divlab::config::LabConfig& cfg,
                     const ObjectiveOverrides& ov) {
  if (ov.kind) {
    divlab::ObjectiveSpec spec;
    spec.kind = divlab::kind_from_name(*ov.kind);
    cfg.objectives.assign(1, spec);
  }
  for (auto& spec : cfg.objectives) {
    if (ov.alpha) spec.alpha = *ov.alpha;
    if (ov.beta) spec.beta_js = *ov.beta;
    if (ov.gamma) spec.gamma = *ov.gamma;
    if (ov.lambda) spec.lambda_skew = *ov.lambda;
    divlab::validate(spec);
  }
  if (ov.seed) {
    if (auto* z = std::get_if<divlab::ZipfTeacher>(&cfg.teacher))
      z->seed = *ov.seed;
    if (cfg.init.kind == divlab::InitKind::gaussian) cfg.init.seed = *ov.seed;
  }
}

/// Unique artifact stem per objective: kind name, with _2, _3... appended
/// when the same kind appears more than once.
std::vector<std::string> objective_stems(
    const std::vector<divlab::ObjectiveSpec>& specs) {
  std::map<std::string, int> seen;
  std::vector<std::string> stems;
  for (const auto& s : specs) {
    std::string stem = divlab::kind_name(s.kind);
    const int n = ++seen[stem];
    if (n > 1) stem += "_" + std::to_string(n);
    stems.push_back(stem);
  }
  return stems;
}

void write_manifest(const fs::path& dir, divlab::config::json doc,
                    const std::string& command) {
  doc["command"] = command;
  const fs::path path = dir / "manifest.toml";
  auto out = open_output(path);
  divlab::config::emit_document(out, doc);
  finish_output(out, path);
}

/// Class-index densities, raw order and ordered by descending teacher mass.
void write_categorical_densities(const fs::path& dir, const std::string& stem,
                                 const divlab::ProbVector& teacher,
                                 const divlab::ProbVector& density) {
  std::vector<double> centers(density.size());
  std::iota(centers.begin(), centers.end(), 0.0);
  {
    const fs::path path = dir / ("density_" + stem + "_raw.csv");
    auto out = open_output(path);
    divlab::csv::write_density_csv(out, centers, density);
    finish_output(out, path);
  }
  std::vector<std::size_t> order(density.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return teacher[a] > teacher[b];
  });
  std::vector<double> sorted(density.size());
  for (std::size_t r = 0; r < order.size(); ++r) sorted[r] = density[order[r]];
  {
    const fs::path path = dir / ("density_" + stem + "_sorted.csv");
    auto out = open_output(path);
    divlab::csv::write_density_csv(out, centers,
                                   divlab::ProbVector(std::move(sorted)));
    finish_output(out, path);
  }
}

int cmd_fit(const std::string& config_path, const std::string& out_flag,
            const ObjectiveOverrides& ov) {
  auto doc = divlab::config::load_document(config_path);
  auto cfg = divlab::config::lab_config_from_json(doc, config_path);
  apply_overrides(cfg, ov);
  if (cfg.objectives.empty())
    throw std::invalid_argument(config_path +
                                ": fit needs at least one objective");
  const fs::path dir = resolve_out_dir(out_flag, cfg.out_dir);
  fs::create_directories(dir);
  const auto base = divlab::config::to_run_config(cfg, cfg.objectives.front());
  const auto trajectories = divlab::compare_objectives(cfg.objectives, base);
  const auto teacher = divlab::make_teacher(cfg.teacher);
  const auto stems = objective_stems(cfg.objectives);
  bool any_diverged = false;
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    const auto& traj = trajectories[i];
    const fs::path path = dir / ("traj_" + stems[i] + ".csv");
    auto out = open_output(path);
    divlab::csv::write_trajectory_csv(out, traj);
    finish_output(out, path);
    write_categorical_densities(dir, stems[i], teacher, traj.final_student);
    if (traj.diverged) {
      any_diverged = true;
      std::cerr << "error: objective " << stems[i]
                << " diverged; partial trajectory retained\n";
    }
  }
  write_categorical_densities(dir, "teacher", teacher, teacher);
  if (any_diverged) return 3;
  write_manifest(dir, divlab::config::lab_config_to_json(cfg, false), "fit");
  std::cout << "fit: wrote " << trajectories.size() << " trajectories to "
            << dir.string() << "\n";
  return 0;
}

int cmd_mixture(const std::string& config_path, const std::string& out_flag,
                const ObjectiveOverrides& ov) {
  auto doc = divlab::config::load_document(config_path);
  auto cfg = divlab::config::lab_config_from_json(doc, config_path);
  apply_overrides(cfg, ov);
  if (cfg.objectives.empty())
    throw std::invalid_argument(config_path +
                                ": mixture needs at least one objective");
  const fs::path dir = resolve_out_dir(out_flag, cfg.out_dir);
  fs::create_directories(dir);
  const auto base =
      divlab::config::to_mixture_config(cfg, cfg.objectives.front());
  const auto results = divlab::mixture_toy(cfg.objectives, base);
  const auto teacher = divlab::make_teacher(base.teacher);
  const divlab::Grid grid{base.teacher.lo, base.teacher.hi, base.teacher.bins};
  std::vector<double> centers(static_cast<std::size_t>(grid.bins));
  for (int j = 0; j < grid.bins; ++j)
    centers[static_cast<std::size_t>(j)] = grid.center(j);
  const auto stems = objective_stems(cfg.objectives);
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& res = results[i];
    {
      const fs::path path = dir / ("traj_" + stems[i] + ".csv");
      auto out = open_output(path);
      divlab::csv::write_trajectory_csv(out, res.trajectory);
      finish_output(out, path);
    }
    {
      const fs::path path = dir / ("density_" + stems[i] + ".csv");
      auto out = open_output(path);
      divlab::csv::write_density_csv(out, centers,
                                     res.trajectory.final_student);
      finish_output(out, path);
    }
    for (const auto& w : res.trajectory.warnings)
      std::cerr << "warning: " << stems[i] << ": " << w << "\n";
  }
  {
    const fs::path path = dir / "density_teacher.csv";
    auto out = open_output(path);
    divlab::csv::write_density_csv(out, centers, teacher);
    finish_output(out, path);
  }
  {
    const fs::path path = dir / "mixture_params.csv";
    auto out = open_output(path);
    out << "objective,mean,stddev,peak\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
      const auto& q = results[i].trajectory.final_student;
      out << stems[i] << ',' << format_double(results[i].mean) << ','
          << format_double(results[i].stddev) << ','
          << format_double(divlab::confidence(q)) << '\n';
    }
    finish_output(out, path);
  }
  write_manifest(dir, divlab::config::lab_config_to_json(cfg, true),
                 "mixture");
  std::cout << "mixture: wrote " << results.size() << " runs to "
            << dir.string() << "\n";
  return 0;
}

int cmd_rho(const std::string& config_path, const std::string& out_flag,
            const std::optional<std::uint64_t>& seed) {
  auto doc = divlab::config::load_document(config_path);
  auto cfg = divlab::config::lab_config_from_json(doc, config_path);
  ObjectiveOverrides ov;
  ov.seed = seed;
  apply_overrides(cfg, ov);
  const fs::path dir = resolve_out_dir(out_flag, cfg.out_dir);
  fs::create_directories(dir);
  divlab::ObjectiveSpec reverse;
  reverse.kind = divlab::ObjectiveKind::rkl;
  const auto series =
      divlab::rho_probe(divlab::config::to_run_config(cfg, reverse));
  {
    const fs::path path = dir / "rho.csv";
    auto out = open_output(path);
    out << "step,rho\n";
    for (const auto& pt : series)
      out << pt.step << ',' << format_double(pt.rho) << '\n';
    finish_output(out, path);
  }
  cfg.objectives.assign(1, reverse);
  write_manifest(dir, divlab::config::lab_config_to_json(cfg, false), "rho");
  std::cout << "rho: wrote " << series.size() << " points to " << dir.string()
            << "\n";
  return 0;
}

int cmd_decompose(const std::string& p_path, const std::string& q_path,
                  int m) {
  const divlab::ProbVector p(read_vector_file(p_path));
  const divlab::ProbVector q(read_vector_file(q_path));
  if (m < 0 || static_cast<std::size_t>(m) >= p.size())
    throw std::invalid_argument("target index out of range");
  const auto mm = static_cast<std::size_t>(m);
  const auto d = divlab::decompose(p, q, mm);
  const auto rep = divlab::grad_target_decomposed(p, q, mm);
  const double total_direct = divlab::rkl(p, q);
  const auto grad = divlab::grad_rkl(p, q);
  std::cout << "trkl = " << format_double(d.trkl) << "\n"
            << "nrkl = " << format_double(d.nrkl) << "\n"
            << "weight_one_minus_qm = " << format_double(d.weight) << "\n"
            << "total_rkl = " << format_double(d.total_rkl) << "\n"
            << "rkl_direct = " << format_double(total_direct) << "\n"
            << "identity_residual = "
            << format_double(std::abs(total_direct - d.total_rkl)) << "\n"
            << "trkl_grad = " << format_double(rep.trkl_grad) << "\n"
            << "nrkl_grad = " << format_double(rep.nrkl_grad) << "\n"
            << "combined = " << format_double(rep.combined) << "\n"
            << "grad_rkl_target = " << format_double(grad[mm]) << "\n"
            << "gradient_residual = "
            << format_double(std::abs(rep.combined - grad[mm])) << "\n";
  return 0;
}

// -- gradcheck ---------------------------------------------------------------

double uniform01(std::mt19937_64& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

double normal01(std::mt19937_64& gen) {
  const double u1 = uniform01(gen);
  const double u2 = uniform01(gen);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

struct GradcheckInstance {
  divlab::ObjectiveSpec spec;
  std::vector<double> p_weights;
  divlab::LogitVector z;
  int m;
};

std::string dump_vector(const std::vector<double>& v) {
  std::string s;
  for (std::size_t j = 0; j < v.size(); ++j) {
    if (j) s.push_back(' ');
    s += format_double(v[j]);
  }
  return s;
}

int cmd_gradcheck(int trials, std::uint64_t seed, bool inject_fault) {
  if (trials < 1) throw std::invalid_argument("gradcheck: trials must be >= 1");
  const std::vector<divlab::ObjectiveKind> kinds = {
      divlab::ObjectiveKind::fkl,  divlab::ObjectiveKind::rkl,
      divlab::ObjectiveKind::sym_kl, divlab::ObjectiveKind::js,
      divlab::ObjectiveKind::sfkl, divlab::ObjectiveKind::srkl,
      divlab::ObjectiveKind::trkl, divlab::ObjectiveKind::nrkl,
      divlab::ObjectiveKind::drkl};
  const std::vector<int> sizes = {2, 3, 4, 8, 16, 32, 64, 128};
  std::mt19937_64 gen(seed);
  const double tol = 1e-5;
  bool ok = true;
  double identity_worst = 0.0;
  std::cout << "gradcheck: trials=" << trials << " seed=" << seed << "\n";
  for (const auto kind : kinds) {
    double worst = 0.0;
    std::optional<GradcheckInstance> worst_instance;
    for (int t = 0; t < trials; ++t) {
      const int V = sizes[gen() % sizes.size()];
      std::vector<double> pw(static_cast<std::size_t>(V));
      divlab::LogitVector z(static_cast<std::size_t>(V));
      divlab::LogitVector pz(static_cast<std::size_t>(V));
      for (auto& v : pz) v = 2.0 * normal01(gen);
      for (auto& v : z) v = 2.0 * normal01(gen);
      const divlab::ProbVector p = divlab::softmax(pz, 1.0, 1e-6);
      const divlab::ProbVector q = divlab::softmax(z);
      const int m = static_cast<int>(gen() % static_cast<std::uint64_t>(V));
      divlab::ObjectiveSpec spec;
      spec.kind = kind;
      spec.alpha = uniform01(gen);
      spec.beta_js = 0.2 + 0.6 * uniform01(gen);
      spec.lambda_skew = 0.5 * uniform01(gen);
      spec.gamma = 0.25 + 1.75 * uniform01(gen);
      auto an = divlab::grad_any(spec, p, q, m);
      if (inject_fault && kind == divlab::ObjectiveKind::rkl)
        an[0] = -an[0];
      const auto fd = divlab::fd_gradient(spec, p, z, m, 1e-5);
      double rel = 0.0;
      for (std::size_t j = 0; j < an.size(); ++j) {
        if (p[j] < 1e-8 || q[j] < 1e-8) continue;
        rel = std::max(rel, std::abs(an[j] - fd[j]) /
                                std::max(std::abs(fd[j]), 1e-8));
      }
      if (rel > worst) {
        worst = rel;
        worst_instance = GradcheckInstance{spec, p.probs(), z, m};
      }
      const auto d = divlab::decompose(p, q, static_cast<std::size_t>(m));
      identity_worst = std::max(
          identity_worst, std::abs(divlab::rkl(p, q) - d.total_rkl));
    }
    std::cout << divlab::kind_name(kind) << " max_rel_err="
              << format_double(worst) << "\n";
    if (!(worst < tol)) {
      ok = false;
      if (worst_instance) {
        std::cout << "worst instance: kind=" << divlab::kind_name(kind)
                  << " m=" << worst_instance->m
                  << " alpha=" << format_double(worst_instance->spec.alpha)
                  << " beta=" << format_double(worst_instance->spec.beta_js)
                  << " lambda="
                  << format_double(worst_instance->spec.lambda_skew)
                  << " gamma=" << format_double(worst_instance->spec.gamma)
                  << "\n  p = " << dump_vector(worst_instance->p_weights)
                  << "\n  z = " << dump_vector(worst_instance->z) << "\n";
      }
    }
  }
  std::cout << "prop1_identity_max_residual=" << format_double(identity_worst)
            << "\n";
  if (!(identity_worst < 1e-9)) ok = false;
  std::cout << "RESULT: " << (ok ? "PASS" : "FAIL") << " (tolerance "
            << format_double(tol) << ")\n";
  return ok ? 0 : 1;
}

int cmd_evaltext(const std::string& input_path, const std::string& out_flag) {
  const auto set = divlab::load_generation_set_file(input_path);
  if (set.prompts.empty())
    throw std::invalid_argument(input_path + ": no prompt records");
  const fs::path dir = resolve_out_dir(out_flag, "");
  fs::create_directories(dir);
  const fs::path path = dir / "text_metrics.csv";
  auto out = open_output(path);
  out << "prompt_id,rouge_l,distinct_2,neg_self_bleu,conf_mean,conf_median,"
         "conf_p90\n";
  double rouge_sum = 0.0;
  std::size_t rouge_count = 0;
  double selfbleu_sum = 0.0;
  std::vector<divlab::TokenSeq> all_candidates;
  for (const auto& rec : set.prompts) {
    double r = 0.0;
    for (const auto& cand : rec.candidates) {
      const double v = divlab::rouge_l(rec.reference, cand);
      r += v;
      rouge_sum += v;
      ++rouge_count;
      all_candidates.push_back(cand);
    }
    r /= static_cast<double>(rec.candidates.size());
    double d2 = 0.0, sb = 0.0;
    try {
      d2 = divlab::distinct_n(rec.candidates, 2);
      sb = divlab::self_bleu(rec.candidates);
    } catch (const std::exception& e) {
      // A prompt too degenerate to score is bad input, not a failed check.
      throw std::invalid_argument(rec.prompt_id + ": " + e.what());
    }
    selfbleu_sum += sb;
    out << rec.prompt_id << ',' << format_double(r) << ','
        << format_double(d2) << ',' << format_double(-sb) << ',';
    if (!rec.confidences.empty()) {
      divlab::GenerationSet one;
      one.prompts.push_back(rec);
      const auto cs = divlab::confidence_summary(one);
      out << format_double(cs.mean) << ',' << format_double(cs.median) << ','
          << format_double(cs.p90);
    } else {
      out << ",,";
    }
    out << '\n';
  }
  const double agg_rouge = rouge_sum / static_cast<double>(rouge_count);
  const double agg_d2 = divlab::distinct_n(all_candidates, 2);
  const double agg_sb =
      selfbleu_sum / static_cast<double>(set.prompts.size());
  out << "ALL," << format_double(agg_rouge) << ',' << format_double(agg_d2)
      << ',' << format_double(-agg_sb) << ',';
  bool any_conf = false;
  for (const auto& rec : set.prompts)
    if (!rec.confidences.empty()) any_conf = true;
  if (any_conf) {
    const auto cs = divlab::confidence_summary(set);
    out << format_double(cs.mean) << ',' << format_double(cs.median) << ','
        << format_double(cs.p90);
  } else {
    out << ",,";
  }
  out << '\n';
  finish_output(out, path);
  divlab::config::json doc;
  doc["input"] = input_path;
  write_manifest(dir, doc, "evaltext");
  std::cout << "evaltext: wrote metrics for " << set.prompts.size()
            << " prompts to " << dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "divlab: a laboratory for distillation divergence objectives.\n"
      "Exit codes: 0 success, 1 check failure, 2 usage/config error, "
      "3 run divergence."};
  app.require_subcommand(1);

  std::string config_path, out_dir, objective_kind;
  std::string p_path, q_path, input_path;
  int target_m = 0;
  int trials = 200;
  std::uint64_t seed = 42;
  bool inject_fault = false;
  double alpha = 0.5, beta = 0.5, gamma = 1.0, lambda = 0.1;

  auto add_objective_flags = [&](CLI::App* cmd) {
    cmd->add_option("--objective", objective_kind,
                    "Replace config objectives with this single kind");
    cmd->add_option("--alpha", alpha, "Forward weight for sym_kl");
    cmd->add_option("--beta", beta, "Teacher mixture weight for js");
    cmd->add_option("--gamma", gamma, "Tail weight for drkl");
    cmd->add_option("--lambda", lambda, "Skew for sfkl/srkl");
  };

  auto* fit = app.add_subcommand(
      "fit", "Gradient-descent fits of student logits to a teacher");
  fit->add_option("--config", config_path, "Config file")->required();
  fit->add_option("--out", out_dir, "Output directory");
  fit->add_option("--seed", seed, "Override teacher and init seeds");
  add_objective_flags(fit);

  auto* gradcheck = app.add_subcommand(
      "gradcheck", "Verify analytic gradients against finite differences");
  gradcheck->add_option("--trials", trials, "Random instances per kind");
  gradcheck->add_option("--seed", seed, "Instance generator seed");
  gradcheck
      ->add_flag("--inject-fault", inject_fault,
                 "Negate one analytic gradient entry (verifies the check)")
      ->group("");

  auto* decompose = app.add_subcommand(
      "decompose", "Print the target split of rkl for two vectors");
  decompose->add_option("p_file", p_path, "Teacher probability file")
      ->required();
  decompose->add_option("q_file", q_path, "Student probability file")
      ->required();
  decompose->add_option("m", target_m, "Target class index")->required();

  auto* mixture = app.add_subcommand(
      "mixture", "Two-parameter Gaussian student on a binned mixture teacher");
  mixture->add_option("--config", config_path, "Config file")->required();
  mixture->add_option("--out", out_dir, "Output directory");
  add_objective_flags(mixture);

  auto* rho = app.add_subcommand(
      "rho", "Reverse/forward gradient-norm ratio along a reverse-KL run");
  rho->add_option("--config", config_path, "Config file")->required();
  rho->add_option("--out", out_dir, "Output directory");
  rho->add_option("--seed", seed, "Override teacher and init seeds");

  auto* evaltext = app.add_subcommand(
      "evaltext", "Fidelity/diversity metrics over generation records");
  evaltext->add_option("input", input_path, "Line-delimited records file")
      ->required();
  evaltext->add_option("--out", out_dir, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto given = [](CLI::App* cmd, const std::string& name) {
    const CLI::Option* opt = cmd->get_option_no_throw(name);
    return opt != nullptr && opt->count() > 0;
  };
  const auto overrides = [&](CLI::App* cmd) {
    ObjectiveOverrides ov;
    if (given(cmd, "--objective")) ov.kind = objective_kind;
    if (given(cmd, "--alpha")) ov.alpha = alpha;
    if (given(cmd, "--beta")) ov.beta = beta;
    if (given(cmd, "--gamma")) ov.gamma = gamma;
    if (given(cmd, "--lambda")) ov.lambda = lambda;
    if (given(cmd, "--seed")) ov.seed = seed;
    return ov;
  };

  try {
    if (app.got_subcommand(fit))
      return cmd_fit(config_path, out_dir, overrides(fit));
    if (app.got_subcommand(gradcheck))
      return cmd_gradcheck(trials, seed, inject_fault);
    if (app.got_subcommand(decompose))
      return cmd_decompose(p_path, q_path, target_m);
    if (app.got_subcommand(mixture))
      return cmd_mixture(config_path, out_dir, overrides(mixture));
    if (app.got_subcommand(rho)) {
      std::optional<std::uint64_t> s;
      if (rho->count("--seed")) s = seed;
      return cmd_rho(config_path, out_dir, s);
    }
    if (app.got_subcommand(evaltext))
      return cmd_evaltext(input_path, out_dir);
    std::cerr << "error: no subcommand\n";
    return 2;
  } catch (const divlab::RunDiverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::domain_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::out_of_range& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
