#pragma once

#include <charconv>
#include <ostream>
#include <stdexcept>
#include <string>
#include <system_error>
#include <vector>

#include "divlab/distributions.hpp"
#include "divlab/toy_lab.hpp"

namespace divlab::csv {

/// Shortest decimal spelling that round-trips the double, so repeated runs
/// produce byte-identical files.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  if (res.ec != std::errc())
    throw std::runtime_error("format_double: conversion failed");
  return std::string(buf, res.ptr);
}

inline constexpr const char* kTrajectoryHeader =
    "step,loss,trkl,nrkl,one_minus_qm,entropy,confidence,active_set_size,"
    "grad_norm,grad_ratio_rho";

inline void write_trajectory_csv(std::ostream& out, const Trajectory& traj) {
  out << kTrajectoryHeader << '\n';
  for (const auto& r : traj.rows) {
    out << r.step << ',' << format_double(r.loss) << ','
        << format_double(r.trkl) << ',' << format_double(r.nrkl) << ','
        << format_double(r.one_minus_qm) << ',' << format_double(r.entropy)
        << ',' << format_double(r.confidence) << ',' << r.active_set_size
        << ',' << format_double(r.grad_norm) << ',';
    if (r.grad_ratio_rho) out << format_double(*r.grad_ratio_rho);
    out << '\n';
  }
}

inline constexpr const char* kDensityHeader = "bin_center,probability";

inline void write_density_csv(std::ostream& out,
                              const std::vector<double>& centers,
                              const ProbVector& density) {
  if (centers.size() != density.size())
    throw std::invalid_argument("write_density_csv: length mismatch");
  out << kDensityHeader << '\n';
  for (std::size_t j = 0; j < centers.size(); ++j)
    out << format_double(centers[j]) << ',' << format_double(density[j])
        << '\n';
}

}  // namespace divlab::csv
