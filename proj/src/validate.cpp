#include "mfsg/validate.hpp"

#include <cmath>

namespace mfsg {

namespace {

constexpr double kRelTol = 1e-5;
constexpr double kFdStep = 1e-6;

struct SamplePoint {
  double t;
  Vec x0, xi, u0, ui, z, p;

  Vec concatenated() const {
    Vec all(1 + x0.size() + xi.size() + u0.size() + ui.size() + z.size() + p.size());
    int at = 0;
    all[at++] = t;
    all.segment(at, x0.size()) = x0; at += static_cast<int>(x0.size());
    all.segment(at, xi.size()) = xi; at += static_cast<int>(xi.size());
    all.segment(at, u0.size()) = u0; at += static_cast<int>(u0.size());
    all.segment(at, ui.size()) = ui; at += static_cast<int>(ui.size());
    all.segment(at, z.size()) = z; at += static_cast<int>(z.size());
    all.segment(at, p.size()) = p;
    return all;
  }
};

Vec uniform_box(RngStream& stream, int dim, double radius) {
  Vec v(dim);
  for (int i = 0; i < dim; ++i) v[i] = radius * (2.0 * stream.uniform() - 1.0);
  return v;
}

SamplePoint draw_point(const GameSpec& spec, const AssumptionBox& box, RngStream& stream,
                       double scale = 1.0) {
  SamplePoint pt;
  pt.t = box.t_max * stream.uniform();
  pt.x0 = uniform_box(stream, spec.dims.k, scale * box.x0);
  pt.xi = uniform_box(stream, spec.dims.n, scale * box.xi);
  pt.u0 = uniform_box(stream, spec.dims.m0, scale * box.u0);
  pt.ui = uniform_box(stream, spec.dims.m, scale * box.ui);
  pt.z = uniform_box(stream, spec.dims.n, scale * box.z);
  pt.p = uniform_box(stream, spec.dims.n, scale * box.p);
  return pt;
}

// Relative discrepancy between an analytic Jacobian column and central FD.
template <typename EvalFn>
double fd_discrepancy(const EvalFn& f, const Vec& at, const Mat& analytic) {
  double worst = 0.0;
  Vec point = at;
  for (int i = 0; i < at.size(); ++i) {
    const double scale = kFdStep * (1.0 + std::abs(at[i]));
    point[i] = at[i] + scale;
    Vec plus = f(point);
    point[i] = at[i] - scale;
    Vec minus = f(point);
    point[i] = at[i];
    Vec fd = (plus - minus) / (2.0 * scale);
    const double denom = 1.0 + analytic.col(i).norm();
    worst = std::max(worst, (fd - analytic.col(i)).norm() / denom);
  }
  return worst;
}

}  // namespace

AssumptionReport validate_assumptions(const GameSpec& spec, const AssumptionBox& box, int samples,
                                      const RngSpec& rng) {
  spec.validate();
  AssumptionReport report;
  report.box = box;
  report.samples = samples;

  struct DerivativeCase {
    std::string name;
    std::function<Mat(const SamplePoint&)> analytic;     // null means not provided
    std::function<Vec(const SamplePoint&, const Vec&)> base;  // base map with one arg replaced
    std::function<Vec(const SamplePoint&)> arg;
  };

  std::vector<DerivativeCase> cases;
  const auto& fol = spec.follower;
  const auto& costs = spec.costs;
  auto add_case = [&](const std::string& name, auto analytic, auto base, auto arg) {
    if (!analytic) return;
    cases.push_back({name,
                     [analytic](const SamplePoint& s) {
                       return analytic(s.t, s.xi, s.ui, s.x0, s.u0, s.z);
                     },
                     base, arg});
  };

  add_case("b1_xi", fol.b1_xi,
           [&fol](const SamplePoint& s, const Vec& v) { return fol.b1(s.t, v, s.ui, s.x0, s.u0, s.z); },
           [](const SamplePoint& s) { return s.xi; });
  add_case("b1_ui", fol.b1_ui,
           [&fol](const SamplePoint& s, const Vec& v) { return fol.b1(s.t, s.xi, v, s.x0, s.u0, s.z); },
           [](const SamplePoint& s) { return s.ui; });
  add_case("b1_u0", fol.b1_u0,
           [&fol](const SamplePoint& s, const Vec& v) { return fol.b1(s.t, s.xi, s.ui, s.x0, v, s.z); },
           [](const SamplePoint& s) { return s.u0; });
  add_case("b1_z", fol.b1_z,
           [&fol](const SamplePoint& s, const Vec& v) { return fol.b1(s.t, s.xi, s.ui, s.x0, s.u0, v); },
           [](const SamplePoint& s) { return s.z; });
  if (spec.dims.k > 0) {
    add_case("b1_x0", fol.b1_x0,
             [&fol](const SamplePoint& s, const Vec& v) { return fol.b1(s.t, s.xi, s.ui, v, s.u0, s.z); },
             [](const SamplePoint& s) { return s.x0; });
  }
  auto add_scalar_case = [&](const std::string& name, auto analytic, auto base, auto arg) {
    if (!analytic) return;
    cases.push_back(
        {name,
         [analytic](const SamplePoint& s) {
           Vec g = analytic(s.t, s.xi, s.ui, s.x0, s.u0, s.z);
           return Mat(g.transpose());
         },
         [base](const SamplePoint& s, const Vec& v) {
           return Vec::Constant(1, base(s, v)).eval();
         },
         arg});
  };
  add_scalar_case("g1_xi", costs.g1_xi,
                  [&costs](const SamplePoint& s, const Vec& v) {
                    return costs.g1(s.t, v, s.ui, s.x0, s.u0, s.z);
                  },
                  [](const SamplePoint& s) { return s.xi; });
  add_scalar_case("g1_ui", costs.g1_ui,
                  [&costs](const SamplePoint& s, const Vec& v) {
                    return costs.g1(s.t, s.xi, v, s.x0, s.u0, s.z);
                  },
                  [](const SamplePoint& s) { return s.ui; });
  add_scalar_case("g1_z", costs.g1_z,
                  [&costs](const SamplePoint& s, const Vec& v) {
                    return costs.g1(s.t, s.xi, s.ui, s.x0, s.u0, v);
                  },
                  [](const SamplePoint& s) { return s.z; });
  if (costs.g0_u0) {
    cases.push_back({"g0_u0",
                     [&costs](const SamplePoint& s) {
                       Vec g = costs.g0_u0(s.t, s.x0, s.u0, s.z);
                       return Mat(g.transpose());
                     },
                     [&costs](const SamplePoint& s, const Vec& v) {
                       return Vec::Constant(1, costs.g0(s.t, s.x0, v, s.z)).eval();
                     },
                     [](const SamplePoint& s) { return s.u0; }});
  }
  if (costs.g0_z) {
    cases.push_back({"g0_z",
                     [&costs](const SamplePoint& s) {
                       Vec g = costs.g0_z(s.t, s.x0, s.u0, s.z);
                       return Mat(g.transpose());
                     },
                     [&costs](const SamplePoint& s, const Vec& v) {
                       return Vec::Constant(1, costs.g0(s.t, s.x0, s.u0, v)).eval();
                     },
                     [](const SamplePoint& s) { return s.z; }});
  }
  if (costs.G1 && costs.G1_xi) {
    cases.push_back({"G1_xi",
                     [&costs](const SamplePoint& s) {
                       Vec g = costs.G1_xi(s.xi);
                       return Mat(g.transpose());
                     },
                     [&costs](const SamplePoint&, const Vec& v) {
                       return Vec::Constant(1, costs.G1(v)).eval();
                     },
                     [](const SamplePoint& s) { return s.xi; }});
  }

  for (const auto& c : cases) {
    CheckEntry entry;
    entry.name = c.name;
    RngStream stream(rng, stream::kSampler, std::hash<std::string>{}(c.name), 0);
    for (int s = 0; s < samples; ++s) {
      SamplePoint pt = draw_point(spec, box, stream);
      Mat analytic = c.analytic(pt);
      auto slice = [&](const Vec& v) { return c.base(pt, v); };
      const double disc = fd_discrepancy(slice, c.arg(pt), analytic);
      if (disc > entry.worst) {
        entry.worst = disc;
        entry.witness = pt.concatenated();
      }
    }
    entry.pass = entry.worst <= kRelTol;
    if (!entry.pass) entry.detail = "derivative callback disagrees with central differences";
    report.all_pass = report.all_pass && entry.pass;
    report.derivative_checks.push_back(std::move(entry));
  }

  // Two-scale growth audit: a linear-growth quantity has a bounded ratio, so
  // the ratio at the full box should not dwarf the ratio at a shrunken box.
  auto growth_check = [&](const std::string& name, auto value, double power) {
    CheckEntry entry;
    entry.name = name;
    RngStream stream(rng, stream::kSampler, std::hash<std::string>{}("growth:" + name), 0);
    double inner = 0.0, outer = 0.0;
    Vec worst_point;
    for (int s = 0; s < samples; ++s) {
      SamplePoint small = draw_point(spec, box, stream, 0.125);
      SamplePoint large = draw_point(spec, box, stream, 1.0);
      auto ratio = [&](const SamplePoint& pt) {
        const double scale = 1.0 + std::pow(pt.xi.norm(), power) + std::pow(pt.ui.norm(), power) +
                             std::pow(pt.x0.norm(), power) + std::pow(pt.u0.norm(), power) +
                             std::pow(pt.z.norm(), power);
        return value(pt) / scale;
      };
      inner = std::max(inner, ratio(small));
      const double r = ratio(large);
      if (r > outer) {
        outer = r;
        worst_point = large.concatenated();
      }
    }
    entry.worst = outer;
    entry.witness = worst_point;
    entry.pass = outer <= 3.0 * inner + 1e-9;
    if (!entry.pass) entry.detail = "growth ratio escalates with the sampling scale";
    report.all_pass = report.all_pass && entry.pass;
    report.growth_checks.push_back(std::move(entry));
  };

  growth_check("b1 linear growth",
               [&](const SamplePoint& s) { return fol.b1(s.t, s.xi, s.ui, s.x0, s.u0, s.z).norm(); },
               1.0);
  growth_check("g1 quadratic growth",
               [&](const SamplePoint& s) {
                 return std::abs(costs.g1(s.t, s.xi, s.ui, s.x0, s.u0, s.z));
               },
               2.0);
  growth_check("g0 quadratic growth",
               [&](const SamplePoint& s) { return std::abs(costs.g0(s.t, s.x0, s.u0, s.z)); }, 2.0);

  // Stationarity of alpha1 at sampled interior points.
  report.stationarity.name = "alpha1 stationarity";
  if (spec.stationarity.alpha1) {
    RngStream stream(rng, stream::kSampler, std::hash<std::string>{}("alpha1"), 0);
    for (int s = 0; s < samples; ++s) {
      SamplePoint pt = draw_point(spec, box, stream);
      Vec ui = spec.stationarity.alpha1(pt.t, pt.xi, pt.x0, pt.u0, pt.z, pt.p);
      Vec grad = hamiltonian_follower_du(spec, pt.t, pt.xi, ui, pt.x0, pt.u0, pt.z, pt.p);
      if (grad.norm() > report.stationarity.worst) {
        report.stationarity.worst = grad.norm();
        report.stationarity.witness = pt.concatenated();
      }
    }
    report.stationarity.pass = report.stationarity.worst <= 1e-8;
  }
  report.all_pass = report.all_pass && report.stationarity.pass;

  // Projection sanity on sampled pairs.
  report.projection.name = "control-set projections";
  {
    RngStream stream(rng, stream::kSampler, std::hash<std::string>{}("projection"), 0);
    double worst = 0.0;
    for (int s = 0; s < samples; ++s) {
      Vec u = uniform_box(stream, spec.dims.m, box.ui);
      Vec v = uniform_box(stream, spec.dims.m, box.ui);
      Vec pu = spec.follower_set.apply(u);
      Vec pv = spec.follower_set.apply(v);
      worst = std::max(worst, (spec.follower_set.apply(pu) - pu).norm());
      const double expansion = (pu - pv).norm() - (u - v).norm();
      worst = std::max(worst, expansion);
    }
    report.projection.worst = worst;
    report.projection.pass = worst <= 1e-12;
  }
  report.all_pass = report.all_pass && report.projection.pass;

  return report;
}

}  // namespace mfsg
