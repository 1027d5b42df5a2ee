#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "dsbp/config.hpp"
#include "dsbp/dataset.hpp"
#include "dsbp/metrics.hpp"
#include "dsbp/network.hpp"

namespace dsbp::harness {

// ------------------------------------------------------------- file formats

// Tab-separated metric table: one header row, then one row per record in the
// fixed MetricsRecord column order. Doubles carry 9 significant digits,
// missing values are the literal "NA", every row ends in '\n'. Wall-clock
// times are deliberately excluded (see emit_timing).
void emit_metrics(const std::vector<MetricsRecord>& records, const std::string& path);
std::vector<MetricsRecord> read_metrics(const std::string& path);

// Wall-clock table (kind, index, wall_ms): "iter" rows carry each record's
// elapsed time, "epoch" rows the per-epoch durations. Kept in its own file so
// determinism checks can hash everything else.
void emit_timing(const std::vector<MetricsRecord>& records,
                 const std::vector<double>& epoch_wall_ms, const std::string& path);

// Plain-text network snapshot with exact (round-tripping) decimal weights.
void save_network(const nn::Network& net, const std::string& path);
nn::Network load_network(const std::string& path);

// Ordered key-value summary under a [summary] header, same grammar as the
// config format. Values are strings; numeric entries use exact decimals.
using SummaryMap = std::vector<std::pair<std::string, std::string>>;
void write_summary(const SummaryMap& entries, const std::string& path);
SummaryMap read_summary(const std::string& path);
// throws std::runtime_error naming the key when absent
const std::string& summary_value(const SummaryMap& summary, const std::string& key);

// 9-significant-digit rendering used by every metric/figure table
std::string format_sig9(double v);

// --------------------------------------------------------------- run inputs

struct DataSplit {
    data::Dataset train;
    data::Dataset test;  // may be empty (size() == 0) when unrequested
};

// Materializes the [data] section. Synthetic kinds draw train and test from
// one generator pass and split afterwards, so both sides share the same
// class geometry. data.seed == 0 falls back to the run seed.
DataSplit build_datasets(const DataConfig& d, std::uint64_t run_seed);

// mlp factory plus the [model] hidden-activation choice
nn::Network build_network(const ModelConfig& m, std::uint64_t seed);

// ---------------------------------------------------------------- run modes

// Each run writes only inside out_dir (created if missing) and starts by
// snapshotting the effective config as config.snapshot. Any thrown error is
// reported by the CLI, which drops a FAILED marker next to partial outputs.

// metrics.tsv, timing.tsv, refresh_events.tsv, prune_events.tsv, model.txt,
// summary.txt
void run_train(const ExperimentConfig& cfg, const std::string& out_dir);

// meta_metrics.tsv (one row per outer episode), optional meta_eval.tsv with
// paired meta-vs-scratch accuracies, model.txt, summary.txt
void run_meta(const ExperimentConfig& cfg, const std::string& out_dir);

// sde_path.tsv; weak_order.tsv when [sde] weak_etas is nonempty; summary.txt
void run_sde(const ExperimentConfig& cfg, const std::string& out_dir);

// Evaluates the generalization bound against a trained run's summary.txt for
// every (sigma, third_deriv) pair, echoing the terms to `echo` and writing
// bound.tsv.
void run_bound(const ExperimentConfig& cfg, const std::string& out_dir, std::ostream& echo);

// Figure-ready tables from a finished training run directory:
//   fig_alignment.tsv     method, epoch, mean alignment (one row per epoch)
//   fig_hessian.tsv       epoch, iteration, top Hessian eigenvalue
//   fig_eig_variance.tsv  layer, sliding-window eigenvalue variance
//   fig_landscape.tsv     a, b, loss over the slice lattice
//   fig_angles.tsv        epoch, iteration, perturbation angle
// plus one self-contained SVG per table when [plot] svg = true.
void run_plot_data(const std::string& run_dir, const std::string& out_dir);

// prune_report.txt: per-layer threshold trajectory checks, commit/veto
// counts, and final sparsity pulled from a run directory.
void run_prune_report(const std::string& run_dir, const std::string& out_dir);

// Writes the FAILED marker (message inside) used by the CLI on run errors.
void write_failure_marker(const std::string& out_dir, const std::string& message);

}  // namespace dsbp::harness
