#pragma once

#include <array>
#include <cstdint>
#include <string>

#include <Eigen/Core>

#include "dot/mesh.hpp"

namespace dot {

/// Per-node optical parameters; refractive index is spatially constant.
struct OpticalField {
  Eigen::VectorXd mua;   // absorption coefficient (1/mm)
  Eigen::VectorXd musp;  // reduced scattering coefficient (1/mm)
  double n = 1.4;

  void validate(const Mesh& mesh) const;
};

struct Inclusion {
  Point2 center;          // mm
  double width = 0.0;     // diameter (mm)
  double contrast = 1.0;  // multiplier on both mua and musp
};

enum class DepthConvention { TopOfInclusion, CenterDepth };

struct PhantomSpec {
  double separation = 10.0;  // center-to-center (mm)
  double depth = 10.0;       // mm, interpreted per convention
  double contrast = 2.0;
  DepthConvention convention = DepthConvention::TopOfInclusion;
  double mua0 = 0.02;   // background absorption (1/mm)
  double musp0 = 0.67;  // background reduced scattering (1/mm)
  double n = 1.4;

  double inclusion_width() const { return 0.5 * separation; }
  void validate(double radius) const;
};

OpticalField homogeneous_disk(const Mesh& mesh, double mua0, double musp0,
                              double n);

/// Multiplies mua and musp by inc.contrast on nodes within width/2 of the
/// center; throws if the inclusion pokes outside the disk.
OpticalField add_inclusion(const OpticalField& field, const Mesh& mesh,
                           const Inclusion& inc);

/// Centers of the two inclusions for a phantom on a disk of the given radius.
std::array<Point2, 2> phantom_centers(double radius, const PhantomSpec& spec);

OpticalField two_inclusion_phantom(const Mesh& mesh, const PhantomSpec& spec);

std::uint64_t field_hash(const OpticalField& field);

std::string phantom_to_json(const PhantomSpec& spec);
PhantomSpec phantom_from_json(const std::string& text);

}  // namespace dot
