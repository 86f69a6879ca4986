#pragma once

#include <limits>
#include <optional>
#include <string>

#include "scpgan/common.hpp"

namespace scpgan::surgery {

using GradVector = std::vector<double>;

// Norms below this are treated as degenerate wherever they would enter a
// denominator: a vanishing gradient part cannot conflict.
inline constexpr double kDegenerateNorm = 1e-12;

enum class Branch {
  two_part_acute,
  two_part_obtuse,
  acute_acute,
  acute_obtuse,
  obtuse_acute,
  obtuse_obtuse,
};

inline const char* branch_name(Branch b) {
  switch (b) {
    case Branch::two_part_acute: return "two_part_acute";
    case Branch::two_part_obtuse: return "two_part_obtuse";
    case Branch::acute_acute: return "acute_acute";
    case Branch::acute_obtuse: return "acute_obtuse";
    case Branch::obtuse_acute: return "obtuse_acute";
    case Branch::obtuse_obtuse: return "obtuse_obtuse";
  }
  return "?";
}

struct ScWeights {
  double w_c = 1.0;
  double w_e = 1.0;
  std::optional<double> w_n;
  Branch branch = Branch::two_part_acute;
  bool degenerate = false;
};

struct DotNorms {
  double dot = 0.0;
  double n1 = 0.0;
  double n2 = 0.0;
};

inline DotNorms dot_and_norms(const GradVector& g1, const GradVector& g2) {
  if (g1.size() != g2.size()) throw LengthMismatch("dot_and_norms: lengths differ");
  DotNorms r;
  double s1 = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < g1.size(); ++i) {
    r.dot += g1[i] * g2[i];
    s1 += g1[i] * g1[i];
    s2 += g2[i] * g2[i];
  }
  r.n1 = std::sqrt(s1);
  r.n2 = std::sqrt(s2);
  return r;
}

inline double dot(const GradVector& a, const GradVector& b) {
  if (a.size() != b.size()) throw LengthMismatch("dot: lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Two-part self-correction. The angle test is the sign of the inner product;
// an exact 90-degree pair takes the correction branch, where the formula
// yields w_e = 0 and the combined direction is gc itself.
inline ScWeights sc2_weights(const GradVector& gc, const GradVector& ge) {
  const DotNorms d = dot_and_norms(gc, ge);
  ScWeights w;
  w.w_c = 1.0;
  if (d.dot > 0.0) {
    w.w_e = 1.0;
    w.branch = Branch::two_part_acute;
    return w;
  }
  w.branch = Branch::two_part_obtuse;
  if (d.n2 < kDegenerateNorm) {
    w.w_e = 1.0;
    w.degenerate = true;
    return w;
  }
  w.w_e = -d.dot / (d.n2 * d.n2);
  // anti-parallel collapse: the corrected direction is the zero vector
  double combined_sq = 0.0;
  for (std::size_t i = 0; i < gc.size(); ++i) {
    const double v = gc[i] + w.w_e * ge[i];
    combined_sq += v * v;
  }
  const double ref = std::max(d.n1, d.n2);
  if (combined_sq <= kDegenerateNorm * kDegenerateNorm * ref * ref) w.degenerate = true;
  return w;
}

// Three-part self-correction: the two-part weights first, then the noisy
// part is corrected against the already-combined direction. The closed
// forms force the final direction exactly orthogonal to gn in the obtuse
// cases.
inline ScWeights sc3_weights(const GradVector& gc, const GradVector& ge,
                             const GradVector& gn) {
  if (gc.size() != gn.size()) throw LengthMismatch("sc3_weights: lengths differ");
  ScWeights w = sc2_weights(gc, ge);
  const bool ce_acute = w.branch == Branch::two_part_acute;

  double dot_comb_n = 0.0, nn_sq = 0.0;
  for (std::size_t i = 0; i < gc.size(); ++i) {
    dot_comb_n += (w.w_c * gc[i] + w.w_e * ge[i]) * gn[i];
    nn_sq += gn[i] * gn[i];
  }

  if (dot_comb_n > 0.0) {
    w.w_n = 1.0;
    w.branch = ce_acute ? Branch::acute_acute : Branch::obtuse_acute;
    return w;
  }
  w.branch = ce_acute ? Branch::acute_obtuse : Branch::obtuse_obtuse;
  if (std::sqrt(nn_sq) < kDegenerateNorm) {
    w.w_n = 1.0;
    w.degenerate = true;
    return w;
  }
  const DotNorms ce = dot_and_norms(gc, ge);
  const double dcn = dot(gc, gn);
  const double den = dot(ge, gn);
  if (ce_acute || ce.n2 < kDegenerateNorm) {
    // with w_e = 1 (acute, or a vanishing ge) the correction reduces to
    // w_n = -<gc + ge, gn> / |gn|^2
    w.w_n = -dcn / nn_sq - den / nn_sq;
  } else {
    const double ne_sq = ce.n2 * ce.n2;
    w.w_n = -dcn / nn_sq + (ce.dot * den) / (ne_sq * nn_sq);
  }
  return w;
}

inline GradVector combine(const GradVector& gc, const GradVector& ge,
                          const GradVector* gn, const ScWeights& w) {
  if (gc.size() != ge.size() || (gn && gn->size() != gc.size()))
    throw LengthMismatch("combine: lengths differ");
  GradVector out(gc.size());
  if (gn && w.w_n) {
    const double wn = *w.w_n;
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = w.w_c * gc[i] + w.w_e * ge[i] + wn * (*gn)[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = w.w_c * gc[i] + w.w_e * ge[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Telemetry
// ---------------------------------------------------------------------------

struct ConflictReport {
  double angle_ce_deg = 0.0;
  double angle_cen_deg = std::numeric_limits<double>::quiet_NaN();  // vs gn, NaN when unused
  double norm_c = 0.0;
  double norm_e = 0.0;
  double norm_n = std::numeric_limits<double>::quiet_NaN();
  ScWeights weights;
  // sign of <final, part>; exact zeros count as non-obtuse
  bool final_obtuse_c = false;
  bool final_obtuse_e = false;
  bool final_obtuse_n = false;
};

inline double angle_deg(double dot, double n1, double n2) {
  if (n1 <= 0.0 || n2 <= 0.0) return 0.0;
  const double c = std::clamp(dot / (n1 * n2), -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

inline ConflictReport conflict_report(const GradVector& gc, const GradVector& ge,
                                      const GradVector* gn) {
  ConflictReport r;
  const DotNorms ce = dot_and_norms(gc, ge);
  r.angle_ce_deg = angle_deg(ce.dot, ce.n1, ce.n2);
  r.norm_c = ce.n1;
  r.norm_e = ce.n2;
  r.weights = gn ? sc3_weights(gc, ge, *gn) : sc2_weights(gc, ge);
  const GradVector final = combine(gc, ge, gn, r.weights);
  r.final_obtuse_c = dot(final, gc) < 0.0;
  r.final_obtuse_e = dot(final, ge) < 0.0;
  if (gn) {
    GradVector comb(gc.size());
    for (std::size_t i = 0; i < comb.size(); ++i)
      comb[i] = r.weights.w_c * gc[i] + r.weights.w_e * ge[i];
    const DotNorms cn = dot_and_norms(comb, *gn);
    r.angle_cen_deg = angle_deg(cn.dot, cn.n1, cn.n2);
    r.norm_n = cn.n2;
    r.final_obtuse_n = dot(final, *gn) < 0.0;
  }
  return r;
}

// One CSV row per training step; header matches csv_header().
inline std::string conflict_csv_header() {
  return "step,angle_ce_deg,angle_cen_deg,w_c,w_e,w_n,branch,degenerate";
}

inline std::string conflict_csv_row(int step, const ConflictReport& r) {
  char buf[256];
  std::string wn = r.weights.w_n ? std::to_string(*r.weights.w_n) : "";
  std::string cen = std::isnan(r.angle_cen_deg) ? "" : std::to_string(r.angle_cen_deg);
  std::snprintf(buf, sizeof(buf), "%d,%.10g,%s,%.10g,%.10g,%s,%s,%d", step, r.angle_ce_deg,
                cen.c_str(), r.weights.w_c, r.weights.w_e, wn.c_str(),
                branch_name(r.weights.branch), r.weights.degenerate ? 1 : 0);
  return buf;
}

}  // namespace scpgan::surgery
