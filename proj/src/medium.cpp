#include "dot/medium.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "dot/io.hpp"

namespace dot {

void OpticalField::validate(const Mesh& mesh) const {
  if (mua.size() != mesh.node_count() || musp.size() != mesh.node_count())
    throw std::invalid_argument("OpticalField: array length != node count");
  if ((mua.array() <= 0.0).any() || (musp.array() <= 0.0).any())
    throw std::invalid_argument("OpticalField: coefficients must be positive");
  if (n < 1.0) throw std::invalid_argument("OpticalField: n must be >= 1");
}

void PhantomSpec::validate(double radius) const {
  if (!(separation > 0.0))
    throw std::invalid_argument("PhantomSpec: separation must be > 0");
  if (depth < 0.0) throw std::invalid_argument("PhantomSpec: depth must be >= 0");
  if (!(contrast > 0.0))
    throw std::invalid_argument("PhantomSpec: contrast must be > 0");
  if (!(separation > inclusion_width()))
    throw std::invalid_argument("PhantomSpec: inclusions overlap");
  if (!(mua0 > 0.0 && musp0 > 0.0))
    throw std::invalid_argument("PhantomSpec: background must be positive");
  phantom_centers(radius, *this);  // throws if the geometry does not fit
}

OpticalField homogeneous_disk(const Mesh& mesh, double mua0, double musp0,
                              double n) {
  if (!(mua0 > 0.0 && musp0 > 0.0))
    throw std::invalid_argument("homogeneous_disk: parameters must be > 0");
  OpticalField f;
  f.mua = Eigen::VectorXd::Constant(mesh.node_count(), mua0);
  f.musp = Eigen::VectorXd::Constant(mesh.node_count(), musp0);
  f.n = n;
  return f;
}

OpticalField add_inclusion(const OpticalField& field, const Mesh& mesh,
                           const Inclusion& inc) {
  if (!(inc.width > 0.0))
    throw std::invalid_argument("add_inclusion: width must be > 0");
  if (!(inc.contrast > 0.0))
    throw std::invalid_argument("add_inclusion: contrast must be > 0");
  if (norm2d(inc.center) + 0.5 * inc.width > mesh.radius + 1e-12)
    throw std::invalid_argument("add_inclusion: inclusion extends outside disk");
  OpticalField out = field;
  const double r2 = 0.25 * inc.width * inc.width;
  for (int i = 0; i < mesh.node_count(); ++i) {
    const Point2 d = mesh.nodes[i] - inc.center;
    if (dot2(d, d) <= r2) {
      out.mua[i] *= inc.contrast;
      out.musp[i] *= inc.contrast;
    }
  }
  return out;
}

std::array<Point2, 2> phantom_centers(double radius, const PhantomSpec& spec) {
  const double w = spec.inclusion_width();
  // Radial distance of the centers: the depth is measured along the inward
  // radial direction from the boundary point nearest each inclusion.
  double rc = 0.0;
  switch (spec.convention) {
    case DepthConvention::TopOfInclusion:
      rc = radius - spec.depth - 0.5 * w;
      break;
    case DepthConvention::CenterDepth:
      rc = radius - spec.depth;
      break;
  }
  const double half = 0.5 * spec.separation;
  if (rc - 0.5 * w < 0.0 || rc < half)
    throw std::invalid_argument("phantom_centers: geometry does not fit");
  if (rc + 0.5 * w > radius)
    throw std::invalid_argument("phantom_centers: inclusion outside disk");
  // Symmetric about the vertical axis through the disk top, horizontal
  // center-to-center distance = separation.
  const double yc = std::sqrt(rc * rc - half * half);
  return {Point2{-half, yc}, Point2{half, yc}};
}

OpticalField two_inclusion_phantom(const Mesh& mesh, const PhantomSpec& spec) {
  spec.validate(mesh.radius);
  OpticalField f = homogeneous_disk(mesh, spec.mua0, spec.musp0, spec.n);
  const auto centers = phantom_centers(mesh.radius, spec);
  for (const Point2& c : centers)
    f = add_inclusion(f, mesh, {c, spec.inclusion_width(), spec.contrast});
  return f;
}

std::uint64_t field_hash(const OpticalField& field) {
  std::uint64_t h = fnv1a64(field.mua.data(), field.mua.size() * sizeof(double));
  h = fnv1a64(field.musp.data(), field.musp.size() * sizeof(double), h);
  return fnv1a64(&field.n, sizeof(double), h);
}

std::string phantom_to_json(const PhantomSpec& spec) {
  nlohmann::json j;
  j["separation_mm"] = spec.separation;
  j["depth_mm"] = spec.depth;
  j["contrast"] = spec.contrast;
  j["depth_convention"] = spec.convention == DepthConvention::TopOfInclusion
                              ? "top_of_inclusion"
                              : "center";
  j["background"] = {{"mua", spec.mua0}, {"musp", spec.musp0}, {"n", spec.n}};
  return j.dump(2);
}

PhantomSpec phantom_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  PhantomSpec s;
  s.separation = j.at("separation_mm").get<double>();
  s.depth = j.at("depth_mm").get<double>();
  s.contrast = j.at("contrast").get<double>();
  const std::string conv = j.at("depth_convention").get<std::string>();
  if (conv == "top_of_inclusion")
    s.convention = DepthConvention::TopOfInclusion;
  else if (conv == "center")
    s.convention = DepthConvention::CenterDepth;
  else
    throw std::invalid_argument("unknown depth convention: " + conv);
  s.mua0 = j.at("background").at("mua").get<double>();
  s.musp0 = j.at("background").at("musp").get<double>();
  s.n = j.at("background").at("n").get<double>();
  return s;
}

}  // namespace dot
