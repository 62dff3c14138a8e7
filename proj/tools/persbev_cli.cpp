// Command-line harness for the perspective-BEV kernels: sampling census,
// latency benchmarks, end-to-end synthetic scene runs, and density sweeps.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "persbev/persbev.hpp"

namespace {

persbev::PipelineConfig load_config(const std::string& path) {
  if (path.empty()) return persbev::PipelineConfig{};
  return persbev::load_pipeline_config(path);
}

int run_census(const std::string& config_path, const std::string& out_path) {
  const persbev::PipelineConfig cfg = load_config(config_path);
  cfg.validate();
  const persbev::FrustumGrid grid = cfg.make_grid();
  const persbev::VoxelGridSpec spec = cfg.make_voxel_spec();
  const persbev::SamplingCensus census = persbev::sampling_census(grid, spec);
  const std::size_t C = static_cast<std::size_t>(std::max(cfg.channels, 1));
  const std::uint64_t voxel_bytes =
      persbev::memory_footprint({C, static_cast<std::size_t>(spec.nx),
                                 static_cast<std::size_t>(spec.nz), static_cast<std::size_t>(spec.ny)});
  persbev::emit_report(persbev::census_to_csv(cfg.config_id, census, voxel_bytes), out_path);
  std::printf("census: %s (under near %.4f, under far %.4f, dup near %.3f, dup far %.3f, invalid %.4f)\n",
              out_path.c_str(), census.quartiles[0].under_sampled_fraction,
              census.quartiles[3].under_sampled_fraction, census.quartiles[0].duplication_factor,
              census.quartiles[3].duplication_factor, census.overall.invalid_cell_fraction);
  return 0;
}

int run_bench(const std::string& config_path, int reps, const std::string& out_path) {
  const persbev::PipelineConfig base = load_config(config_path);
  // always benchmark the sampling-free path against grid_nearest, plus the
  // configured mode when it is something else
  std::vector<persbev::PipelineConfig> cfgs;
  persbev::PipelineConfig none_cfg = base;
  none_cfg.sampling = persbev::SamplingMode::none;
  none_cfg.config_id = base.config_id + "/none";
  persbev::PipelineConfig grid_cfg = base;
  grid_cfg.sampling = persbev::SamplingMode::grid_nearest;
  grid_cfg.config_id = base.config_id + "/grid_nearest";
  cfgs.push_back(none_cfg);
  cfgs.push_back(grid_cfg);
  if (base.sampling != persbev::SamplingMode::none &&
      base.sampling != persbev::SamplingMode::grid_nearest) {
    persbev::PipelineConfig extra = base;
    extra.config_id = base.config_id + "/" + persbev::to_string(base.sampling);
    cfgs.push_back(extra);
  }
  const persbev::BenchReport report = persbev::latency_bench(cfgs, reps, 1);
  persbev::emit_report(persbev::bench_to_csv(report), out_path);
  const double none_total = report.rows[0].total_us;
  const double grid_total = report.rows[1].total_us;
  std::printf("bench: %s (median total none %.1f us, grid_nearest %.1f us, ratio %.3f)\n",
              out_path.c_str(), none_total, grid_total,
              grid_total > 0.0 ? none_total / grid_total : 0.0);
  return 0;
}

int run_e2e(const std::string& config_path, int seeds, const std::string& sampling,
            const std::string& depth, const std::string& out_path, const std::string& dets_path,
            int threads) {
  persbev::PipelineConfig cfg = load_config(config_path);
  if (!sampling.empty()) cfg.sampling = persbev::parse_sampling_mode(sampling);
  if (!depth.empty()) cfg.depth_mode = persbev::parse_depth_mode(depth);
  if (threads > 0) cfg.thread_count = threads;
  cfg.validate();
  const persbev::BatchResult batch = persbev::run_scene_batch(cfg, seeds, 1, cfg.thread_count);
  persbev::emit_report(persbev::batch_to_csv(cfg, batch), out_path);
  if (!dets_path.empty()) {
    // detections of the first scene, decoded fresh for inspection
    const persbev::Scene scene = persbev::synth_scene(1, cfg.n_objects, cfg);
    const persbev::PipelineResult r = persbev::run_pipeline(scene, cfg);
    persbev::emit_report(persbev::detections_to_csv(1, r.detections), dets_path);
  }
  std::printf("e2e: %s (%d scenes, %lld matches, mean translation error %.6g m)\n", out_path.c_str(),
              seeds, static_cast<long long>(batch.total_matches), batch.mean_translation_error);
  return 0;
}

int run_sweep(const std::string& config_path, const std::string& axis,
              const std::vector<int>& factors, const std::string& out_path) {
  const persbev::PipelineConfig cfg = load_config(config_path);
  const std::vector<persbev::SweepRow> rows = persbev::density_sweep(cfg, axis, factors);
  persbev::emit_report(persbev::sweep_to_csv(rows), out_path);
  std::printf("sweep: %s (%zu factors, voxel bytes %llu -> %llu)\n", out_path.c_str(), rows.size(),
              static_cast<unsigned long long>(rows.front().voxel_bytes),
              static_cast<unsigned long long>(rows.back().voxel_bytes));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perspective-BEV view transformation harness"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_path;

  auto* census = app.add_subcommand("census", "exhaustive voxel-to-source sampling census");
  std::string census_config, census_out;
  census->add_option("--config", census_config, "pipeline config file");
  census->add_option("--out", census_out, "output CSV")->required();

  auto* bench = app.add_subcommand("bench", "stage latency benchmark (single-threaded medians)");
  std::string bench_config, bench_out;
  int bench_reps = 20;
  bench->add_option("--config", bench_config, "pipeline config file");
  bench->add_option("--reps", bench_reps, "repetitions per config (>= 5)");
  bench->add_option("--out", bench_out, "output CSV")->required();

  auto* e2e = app.add_subcommand("e2e", "end-to-end synthetic scene batch");
  std::string e2e_config, e2e_sampling, e2e_depth, e2e_out, e2e_dets;
  int e2e_seeds = 100;
  int e2e_threads = 0;
  e2e->add_option("--config", e2e_config, "pipeline config file");
  e2e->add_option("--seeds", e2e_seeds, "number of seeded scenes")->required();
  e2e->add_option("--sampling", e2e_sampling, "none|grid_nearest|grid_trilinear|voxel_pool");
  e2e->add_option("--depth", e2e_depth, "onehot_oracle|uniform_one|static_random|predicted_stub");
  e2e->add_option("--threads", e2e_threads, "data-parallel scene workers");
  e2e->add_option("--out", e2e_out, "output CSV")->required();
  e2e->add_option("--dets", e2e_dets, "also dump first-scene detections CSV");

  auto* sweep = app.add_subcommand("sweep", "horizontal anchor density sweep");
  std::string sweep_config, sweep_axis = "x-density", sweep_out;
  std::vector<int> sweep_factors{1, 2, 4, 8};
  sweep->add_option("--config", sweep_config, "pipeline config file");
  sweep->add_option("--axis", sweep_axis, "sweep axis (x-density)");
  sweep->add_option("--factors", sweep_factors, "density factors, ascending")->delimiter(',');
  sweep->add_option("--out", sweep_out, "output CSV")->required();

  try {
    app.parse(argc, argv);
    if (census->parsed()) return run_census(census_config, census_out);
    if (bench->parsed()) return run_bench(bench_config, bench_reps, bench_out);
    if (e2e->parsed()) {
      return run_e2e(e2e_config, e2e_seeds, e2e_sampling, e2e_depth, e2e_out, e2e_dets, e2e_threads);
    }
    if (sweep->parsed()) return run_sweep(sweep_config, sweep_axis, sweep_factors, sweep_out);
    return 1;
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const persbev::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
}
