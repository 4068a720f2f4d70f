// Command-line front end: preset spec generation, basis enumeration,
// certification, parameter counting, and learned-optimizer training.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "unf/unf.hpp"

namespace {

using unf::json;

constexpr int kExitUsage = 2;
constexpr int kExitCap = 3;
constexpr int kExitNumerical = 4;

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

json bigint_json(const unf::bigint& v) {
  if (v <= unf::bigint(std::numeric_limits<std::int64_t>::max())) {
    return v.convert_to<std::int64_t>();
  }
  return v.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw unf::ParseError("cannot open '" + path + "'");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw unf::ParseError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw unf::ParseError("failed writing '" + path + "'");
}

void emit_json(const json& doc, const std::string& out_path) {
  std::string text = doc.dump(2) + "\n";
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file(out_path, text);
  }
}

unf::WeightSpaceSpec load_spec_file(const std::string& path) {
  return unf::parse_spec(read_file(path));
}

// Accepts inline JSON ({"n1": 3, ...}) or a path to a JSON file.
unf::DimSizes parse_sizes_arg(const std::string& arg) {
  json doc = json::parse(arg, nullptr, /*allow_exceptions=*/false);
  if (doc.is_discarded()) {
    doc = json::parse(read_file(arg), nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw unf::ParseError("--sizes: invalid JSON in '" + arg + "'");
  }
  if (!doc.is_object()) throw unf::ParseError("--sizes: expected an object of name -> size");
  unf::DimSizes sizes;
  for (const auto& [name, value] : doc.items()) {
    if (!value.is_number_integer() || value.get<std::int64_t>() < 1) {
      throw unf::ParseError("--sizes: entry '" + name + "' must be a positive integer");
    }
    sizes[name] = value.get<std::int64_t>();
  }
  return sizes;
}

unf::DimSizes default_sizes(const unf::WeightSpaceSpec& spec, std::int64_t n) {
  unf::DimSizes sizes;
  for (const auto& name : spec.dim_names()) sizes[name] = n;
  return sizes;
}

int cmd_make_spec(const std::string& preset, int depth, const std::vector<std::int64_t>& widths,
                  std::int64_t kernel, const std::string& out_path,
                  const std::string& sizes_out_path) {
  unf::PresetKind kind = unf::preset_kind_from_string(preset);
  unf::WeightSpaceSpec spec = unf::preset_spec(kind, depth, widths);
  emit_json(unf::serialize_spec_document(spec), out_path);
  if (!sizes_out_path.empty()) {
    unf::DimSizes sizes = unf::preset_sizes(kind, depth, widths, kernel);
    json doc = json::object();
    for (const auto& [name, n] : sizes) doc[name] = n;
    write_file(sizes_out_path, doc.dump(2) + "\n");
  }
  return 0;
}

int cmd_gen_basis(const std::string& spec_path, const std::vector<std::string>& pair, bool all,
                  std::int64_t cap) {
  unf::WeightSpaceSpec spec = load_spec_file(spec_path);
  if (all == !pair.empty()) {
    throw unf::ParseError("gen-basis: pass exactly one of --pair OUT IN or --all");
  }
  std::vector<std::pair<std::string, std::string>> todo;
  if (all) {
    for (const auto& out_t : spec.tensors()) {
      for (const auto& in_t : spec.tensors()) todo.emplace_back(out_t.id, in_t.id);
    }
  } else {
    todo.emplace_back(pair[0], pair[1]);
  }

  json pairs = json::array();
  std::int64_t total = 0;
  for (const auto& [out_id, in_id] : todo) {
    std::vector<unf::BasisDescriptor> descriptors = unf::pair_basis(spec, out_id, in_id, cap);
    std::cout << "# " << out_id << " <- " << in_id << " (" << descriptors.size() << ")\n";
    for (const auto& d : descriptors) std::cout << unf::descriptor_einsum(d) << "\n";
    json entry;
    entry["out"] = out_id;
    entry["in"] = in_id;
    entry["count"] = descriptors.size();
    pairs.push_back(std::move(entry));
    total += static_cast<std::int64_t>(descriptors.size());
  }
  json doc;
  doc["pairs"] = std::move(pairs);
  doc["total"] = total;
  std::cout << doc.dump(2) << "\n";
  return 0;
}

int cmd_verify(const std::string& spec_path, const std::string& sizes_arg, int trials,
               std::uint64_t seed, double tol, const std::string& sigma_path,
               std::int64_t group_cap, std::int64_t matrix_cap, std::int64_t basis_cap,
               const std::string& out_path) {
  auto spec = std::make_shared<const unf::WeightSpaceSpec>(load_spec_file(spec_path));
  unf::DimSizes sizes =
      sizes_arg.empty() ? default_sizes(*spec, 3) : parse_sizes_arg(sizes_arg);
  unf::validate_sizes(*spec, sizes);

  unf::EquivariantLayer<double> layer(spec, sizes, 3, 2, true);
  {
    unf::Rng init_rng = unf::Rng(seed).split("layer-init");
    layer.init(unf::InitScheme::scaled_normal, init_rng);
  }
  auto fn = [&](const unf::WeightValues<double>& w) { return layer.apply(w); };

  unf::EquivarianceReport eq;
  if (!sigma_path.empty()) {
    json doc = json::parse(read_file(sigma_path), nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw unf::ParseError("--sigma: invalid JSON in '" + sigma_path + "'");
    unf::NeuronPermutation sigma = unf::permutation_from_json(doc);
    unf::validate_permutation(sigma, sizes);
    unf::Rng rng = unf::Rng(seed).split("fixed-sigma");
    eq.trials = trials;
    eq.tolerance = tol;
    for (int trial = 0; trial < trials; ++trial) {
      unf::WeightValues<double> w = unf::random_values<double>(spec, sizes, 3, rng.next_u64());
      double err = unf::wv_max_abs_diff(fn(unf::apply_permutation(sigma, w)),
                                        unf::apply_permutation(sigma, fn(w)));
      eq.max_error = std::max(eq.max_error, err);
    }
    eq.pass = eq.max_error <= eq.tolerance;
  } else {
    eq = unf::check_equivariance<double>(fn, spec, sizes, 3, trials,
                                         unf::Rng(seed).split("equiv").next_u64(), tol);
  }

  auto certs = unf::certify_spec(*spec, sizes, group_cap, matrix_cap, basis_cap);

  json doc;
  doc["sizes"] = json::object();
  for (const auto& [name, n] : sizes) doc["sizes"][name] = n;
  doc["equivariance"] = {{"trials", eq.trials},
                         {"max_error", eq.max_error},
                         {"tolerance", eq.tolerance},
                         {"pass", eq.pass}};
  bool all_equal = true;
  json pairs = json::array();
  for (const auto& out_t : spec->tensors()) {
    for (const auto& in_t : spec->tensors()) {
      const unf::PairCertificate& cert = certs.at({out_t.id, in_t.id});
      json entry;
      entry["out"] = out_t.id;
      entry["in"] = in_t.id;
      entry["enumerated"] = cert.enumerated;
      entry["rank"] = cert.rank;
      entry["fixed_dim"] = cert.fixed_dim;
      entry["equal"] = cert.equal;
      pairs.push_back(std::move(entry));
      all_equal = all_equal && cert.equal;
    }
  }
  doc["pairs"] = std::move(pairs);
  doc["all_equal"] = all_equal;
  bool pass = all_equal && eq.pass;
  doc["pass"] = pass;
  emit_json(doc, out_path);
  return pass ? 0 : 1;
}

int cmd_count_params(const std::string& spec_path, const std::string& arch,
                     const std::string& sizes_arg, const std::string& out_path) {
  auto spec = std::make_shared<const unf::WeightSpaceSpec>(load_spec_file(spec_path));
  unf::DimSizes sizes =
      sizes_arg.empty() ? default_sizes(*spec, 3) : parse_sizes_arg(sizes_arg);
  unf::validate_sizes(*spec, sizes);

  unf::OptVariant variant;
  if (arch == "unfopt") {
    variant = unf::OptVariant::unf;
  } else if (arch == "deepsetopt") {
    variant = unf::OptVariant::deepset;
  } else {
    throw unf::ParseError("count-params: unknown --arch '" + arch + "' (unfopt, deepsetopt)");
  }
  unf::UNFModel<double> model = unf::make_opt_model<double>(variant, spec, sizes, 0);
  unf::ParameterCount pc = unf::count_parameters(model);

  json doc;
  doc["arch"] = arch;
  doc["feature_channels"] = unf::kFeatureChannels;
  json blocks = json::array();
  for (const auto& bc : pc.blocks) {
    json entry;
    entry["kind"] = bc.kind;
    entry["params"] = bc.params;
    if (!bc.pair_basis.empty()) {
      json pb = json::array();
      for (const auto& [out_id, in_id, count] : bc.pair_basis) {
        pb.push_back({{"out", out_id}, {"in", in_id}, {"count", count}});
      }
      entry["pair_basis"] = std::move(pb);
    }
    blocks.push_back(std::move(entry));
  }
  doc["blocks"] = std::move(blocks);
  doc["total"] = pc.total;
  doc["weight_space_basis_total"] = bigint_json(unf::basis_count(*spec).total);
  doc["reference_totals"] = {{"deepsetopt", 2788}, {"unfopt", 3783}};
  emit_json(doc, out_path);
  return 0;
}

int cmd_train_lopt(const std::string& variant_str, std::uint64_t seed, int meta_steps,
                   const std::string& out_dir, int particles, double sigma, double lr, double clip,
                   int horizon, int threads, int val_interval, int val_tasks, int eval_tasks,
                   double beta) {
  unf::OptVariant variant = unf::variant_from_string(variant_str);
  unf::BlobsTaskConfig task_cfg;
  if (horizon > 0) task_cfg.horizon = horizon;

  unf::MetaConfig<double> cfg;
  cfg.particles = particles;
  cfg.sigma = sigma;
  cfg.meta_steps = meta_steps;
  cfg.lr = lr;
  cfg.clip = clip;
  cfg.seed = seed;
  cfg.threads = threads;
  cfg.val_interval = val_interval;
  cfg.val_tasks = val_tasks;
  cfg.beta = beta;

  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  auto path = [&](const char* name) { return (fs::path(out_dir) / name).string(); };

  json config;
  config["variant"] = variant_str;
  config["seed"] = seed;
  config["meta_steps"] = cfg.meta_steps;
  config["particles"] = cfg.particles;
  config["sigma"] = cfg.sigma;
  config["lr"] = cfg.lr;
  config["clip"] = cfg.clip;
  config["threads"] = cfg.threads;
  config["val_interval"] = cfg.val_interval;
  config["val_tasks"] = cfg.val_tasks;
  config["eval_tasks"] = eval_tasks;
  config["beta"] = cfg.beta;
  config["alpha_init"] = cfg.alpha_init;
  config["gamma0_init"] = cfg.gamma0_init;
  config["task"] = {{"dims", task_cfg.dims},
                    {"classes", task_cfg.classes},
                    {"hidden", task_cfg.hidden},
                    {"batch", task_cfg.batch},
                    {"horizon", task_cfg.horizon},
                    {"noise", task_cfg.noise},
                    {"log10_scale_half_range", task_cfg.log10_scale_half_range}};
  write_file(path("config.json"), config.dump(2) + "\n");

  unf::MetaResult<double> res = unf::meta_train(task_cfg, variant, cfg);

  std::string history = "meta_step,meta_loss\n";
  for (const auto& [step, loss] : res.history) {
    history += std::to_string(step) + "," + format_double(loss) + "\n";
  }
  write_file(path("meta_history.csv"), history);

  std::vector<unf::EvalRun<double>> runs =
      unf::evaluate_optimizer(task_cfg, res.best, eval_tasks, threads);
  std::string curves = "eval_seed,step,nll\n";
  for (const auto& run : runs) {
    for (std::size_t i = 0; i < run.losses.size(); ++i) {
      curves += std::to_string(run.task_seed) + "," + std::to_string(i) + "," +
                format_double(run.losses[i]) + "\n";
    }
  }
  write_file(path("eval_curves.csv"), curves);

  unf::save_flat_vector(res.best_theta, path("params.json"), path("params.bin"));

  json results;
  results["variant"] = variant_str;
  results["meta_param_count"] = res.best.meta_param_count();
  results["alpha"] = res.best.alpha();
  results["gamma0"] = res.best.gamma0();
  results["beta"] = res.best.beta;
  results["best_step"] = res.best_step;
  results["best_val"] = res.best_val;
  json vals = json::array();
  for (const auto& [step, val] : res.val_history) vals.push_back({{"step", step}, {"val", val}});
  results["val_history"] = std::move(vals);
  json evals = json::array();
  double tail_sum = 0.0;
  for (const auto& run : runs) {
    std::size_t tail = std::min<std::size_t>(10, run.losses.size());
    double tail_mean = std::numeric_limits<double>::infinity();
    if (tail > 0) {
      double s = 0.0;
      for (std::size_t i = run.losses.size() - tail; i < run.losses.size(); ++i) {
        s += run.losses[i];
      }
      tail_mean = s / static_cast<double>(tail);
    }
    tail_sum += tail_mean;
    evals.push_back({{"task_seed", run.task_seed},
                     {"final_loss", run.final_loss},
                     {"mean_last10", tail_mean},
                     {"diverged", run.diverged}});
  }
  results["eval"] = std::move(evals);
  results["mean_final_loss"] = unf::mean_final_loss(runs);
  results["mean_last10_loss"] = tail_sum / static_cast<double>(runs.size());
  write_file(path("results.json"), results.dump(2) + "\n");

  std::cout << variant_str << ": mean final loss " << format_double(unf::mean_final_loss(runs))
            << " over " << runs.size() << " held-out tasks (best meta-step "
            << res.best_step << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"equivariant weight-space layers and a learned optimizer"};
  app.require_subcommand(1);
  int rc = 0;

  auto* make_spec = app.add_subcommand("make-spec", "write a preset weight-space spec as JSON");
  std::string ms_preset;
  int ms_depth = 1;
  std::vector<std::int64_t> ms_widths;
  std::int64_t ms_kernel = 3;
  std::string ms_out, ms_sizes_out;
  make_spec->add_option("--preset", ms_preset, "mlp, rnn, or cnn1d")->required();
  make_spec->add_option("--depth", ms_depth, "number of layers")->required();
  make_spec->add_option("--widths", ms_widths, "depth+1 neuron counts")
      ->required()
      ->delimiter(',');
  make_spec->add_option("--kernel", ms_kernel, "cnn1d kernel size for --sizes-out");
  make_spec->add_option("-o,--out", ms_out, "spec output path (default stdout)");
  make_spec->add_option("--sizes-out", ms_sizes_out, "also write a matching sizes JSON");
  make_spec->callback([&] {
    rc = cmd_make_spec(ms_preset, ms_depth, ms_widths, ms_kernel, ms_out, ms_sizes_out);
  });

  auto* gen_basis = app.add_subcommand("gen-basis", "enumerate basis functions for tensor pairs");
  std::string gb_spec;
  std::vector<std::string> gb_pair;
  bool gb_all = false;
  std::int64_t gb_cap = unf::kDefaultBasisCap;
  gen_basis->add_option("spec", gb_spec, "spec JSON path")->required();
  gen_basis->add_option("--pair", gb_pair, "output and input tensor ids")->expected(2);
  gen_basis->add_flag("--all", gb_all, "every ordered tensor pair");
  gen_basis->add_option("--cap", gb_cap, "per-pair enumeration cap");
  gen_basis->callback([&] { rc = cmd_gen_basis(gb_spec, gb_pair, gb_all, gb_cap); });

  auto* verify = app.add_subcommand("verify", "certify the layer against brute-force oracles");
  std::string vf_spec, vf_sizes, vf_sigma, vf_out;
  int vf_trials = 20;
  std::uint64_t vf_seed = 0;
  double vf_tol = 1e-12;
  std::int64_t vf_group_cap = unf::kDefaultGroupCap;
  std::int64_t vf_matrix_cap = unf::kDefaultMatrixCap;
  std::int64_t vf_basis_cap = unf::kDefaultBasisCap;
  verify->add_option("spec", vf_spec, "spec JSON path")->required();
  verify->add_option("--sizes", vf_sizes, "dimension sizes: inline JSON or a file (default all 3)");
  verify->add_option("--trials", vf_trials, "random equivariance trials");
  verify->add_option("--seed", vf_seed, "rng seed");
  verify->add_option("--tol", vf_tol, "equivariance tolerance");
  verify->add_option("--sigma", vf_sigma, "fixed permutation JSON path instead of random draws");
  verify->add_option("--group-cap", vf_group_cap, "largest group order to enumerate");
  verify->add_option("--matrix-cap", vf_matrix_cap, "largest projector entry count");
  verify->add_option("--basis-cap", vf_basis_cap, "per-pair enumeration cap");
  verify->add_option("-o,--out", vf_out, "certificate output path (default stdout)");
  verify->callback([&] {
    rc = cmd_verify(vf_spec, vf_sizes, vf_trials, vf_seed, vf_tol, vf_sigma, vf_group_cap,
                    vf_matrix_cap, vf_basis_cap, vf_out);
  });

  auto* count_params = app.add_subcommand("count-params", "parameter breakdown of an optimizer f");
  std::string cp_spec, cp_arch, cp_sizes, cp_out;
  count_params->add_option("spec", cp_spec, "spec JSON path")->required();
  count_params->add_option("--arch", cp_arch, "unfopt or deepsetopt")->required();
  count_params->add_option("--sizes", cp_sizes, "dimension sizes (default all 3)");
  count_params->add_option("-o,--out", cp_out, "output path (default stdout)");
  count_params->callback([&] { rc = cmd_count_params(cp_spec, cp_arch, cp_sizes, cp_out); });

  auto* train = app.add_subcommand("train-lopt", "meta-train a learned optimizer");
  std::string tl_variant, tl_out;
  std::uint64_t tl_seed = 0;
  int tl_meta_steps = 200;
  int tl_particles = 16;
  double tl_sigma = 0.01;
  double tl_lr = 1e-3;
  double tl_clip = 1.0;
  int tl_horizon = 0;
  int tl_threads = 0;
  int tl_val_interval = 10;
  int tl_val_tasks = 3;
  int tl_eval_tasks = 5;
  double tl_beta = 0.001;
  train->add_option("--variant", tl_variant, "unf, deepset, or sgdm")->required();
  train->add_option("--seed", tl_seed, "meta-training seed");
  train->add_option("--meta-steps", tl_meta_steps, "outer optimization steps");
  train->add_option("--out", tl_out, "output directory")->required();
  train->add_option("--particles", tl_particles, "objective evaluations per meta-step");
  train->add_option("--sigma", tl_sigma, "perturbation stddev");
  train->add_option("--lr", tl_lr, "meta learning rate");
  train->add_option("--clip", tl_clip, "meta gradient norm clip");
  train->add_option("--horizon", tl_horizon, "inner steps per unroll (default 500)");
  train->add_option("--threads", tl_threads, "worker threads (0 = hardware)");
  train->add_option("--val-interval", tl_val_interval, "meta-steps between center validations");
  train->add_option("--val-tasks", tl_val_tasks, "validation tasks");
  train->add_option("--eval-tasks", tl_eval_tasks, "held-out evaluation tasks");
  train->add_option("--beta", tl_beta, "functional-term attenuation");
  train->callback([&] {
    rc = cmd_train_lopt(tl_variant, tl_seed, tl_meta_steps, tl_out, tl_particles, tl_sigma, tl_lr,
                        tl_clip, tl_horizon, tl_threads, tl_val_interval, tl_val_tasks,
                        tl_eval_tasks, tl_beta);
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const unf::CapError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCap;
  } catch (const unf::NumericalError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const unf::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
