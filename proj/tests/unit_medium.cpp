#include <doctest.h>

#include "dot/medium.hpp"

using namespace dot;

TEST_CASE("homogeneous disk carries the background values") {
  const Mesh mesh = build_disk_mesh(MeshSpec{70.0, 4.0, 8.0});
  const OpticalField f = homogeneous_disk(mesh, 0.02, 0.67, 1.4);
  CHECK(f.mua.size() == mesh.node_count());
  CHECK(f.musp.size() == mesh.node_count());
  CHECK(f.mua.minCoeff() == 0.02);
  CHECK(f.mua.maxCoeff() == 0.02);
  CHECK(f.musp.minCoeff() == 0.67);
  CHECK(f.n == 1.4);

  const OpticalField ones = homogeneous_disk(mesh, 1.0, 1.0, 1.0);
  CHECK(ones.mua.maxCoeff() == 1.0);
  CHECK_THROWS_AS(homogeneous_disk(mesh, -0.1, 1.0, 1.4),
                  std::invalid_argument);
}

TEST_CASE("add_inclusion multiplies inside, leaves outside") {
  const Mesh mesh = build_disk_mesh(MeshSpec{70.0, 3.0, 6.0});
  const OpticalField bg = homogeneous_disk(mesh, 0.02, 0.67, 1.4);

  SUBCASE("identity contrast is a no-op") {
    const OpticalField f = add_inclusion(bg, mesh, {{0.0, 30.0}, 10.0, 1.0});
    CHECK((f.mua - bg.mua).cwiseAbs().maxCoeff() == 0.0);
    CHECK((f.musp - bg.musp).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("2x contrast doubles both coefficients inside") {
    const Inclusion inc{{0.0, 30.0}, 10.0, 2.0};
    const OpticalField f = add_inclusion(bg, mesh, inc);
    bool saw_inside = false;
    for (int i = 0; i < mesh.node_count(); ++i) {
      if (dist2d(mesh.nodes[i], inc.center) <= 5.0) {
        CHECK(f.mua[i] == doctest::Approx(0.04));
        CHECK(f.musp[i] == doctest::Approx(1.34));
        saw_inside = true;
      } else {
        CHECK(f.mua[i] == 0.02);
      }
    }
    CHECK(saw_inside);
  }

  SUBCASE("disjoint inclusions commute") {
    const Inclusion a{{-15.0, 30.0}, 8.0, 2.0};
    const Inclusion b{{15.0, 30.0}, 8.0, 3.0};
    const OpticalField ab = add_inclusion(add_inclusion(bg, mesh, a), mesh, b);
    const OpticalField ba = add_inclusion(add_inclusion(bg, mesh, b), mesh, a);
    CHECK((ab.mua - ba.mua).cwiseAbs().maxCoeff() == 0.0);
    CHECK((ab.musp - ba.musp).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("inclusion outside the disk is rejected") {
    CHECK_THROWS_AS(add_inclusion(bg, mesh, {{69.0, 0.0}, 10.0, 2.0}),
                    std::invalid_argument);
  }

  SUBCASE("positivity holds for any contrast > 0") {
    for (double c : {0.01, 0.1, 0.5, 7.0}) {
      const OpticalField f = add_inclusion(bg, mesh, {{0.0, 30.0}, 12.0, c});
      CHECK(f.mua.minCoeff() > 0.0);
      CHECK(f.musp.minCoeff() > 0.0);
    }
  }
}

TEST_CASE("two-inclusion phantom geometry") {
  const Mesh mesh = build_disk_mesh(MeshSpec{70.0, 2.0, 5.0});

  SUBCASE("width is half the separation") {
    PhantomSpec spec;
    spec.separation = 10.0;
    spec.depth = 10.0;
    CHECK(spec.inclusion_width() == 5.0);
    const auto centers = phantom_centers(70.0, spec);
    CHECK(centers[1].x - centers[0].x == doctest::Approx(10.0));
    // top of the inclusion sits depth below the rim, measured radially
    CHECK(norm2d(centers[0]) + 2.5 == doctest::Approx(60.0));
  }

  SUBCASE("center-depth convention (depth sweep family)") {
    PhantomSpec spec;
    spec.separation = 30.0;
    spec.depth = 20.0;
    spec.convention = DepthConvention::CenterDepth;
    const auto centers = phantom_centers(70.0, spec);
    CHECK(norm2d(centers[0]) == doctest::Approx(50.0));
    CHECK(norm2d(centers[1]) == doctest::Approx(50.0));
    CHECK(centers[1].x - centers[0].x == doctest::Approx(30.0));
  }

  SUBCASE("contrast 1 equals the homogeneous background") {
    PhantomSpec spec;
    spec.separation = 10.0;
    spec.depth = 10.0;
    spec.contrast = 1.0;
    const OpticalField f = two_inclusion_phantom(mesh, spec);
    const OpticalField bg = homogeneous_disk(mesh, spec.mua0, spec.musp0, spec.n);
    CHECK((f.mua - bg.mua).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("mirror symmetry on the symmetric mesh") {
    PhantomSpec spec;
    spec.separation = 20.0;
    spec.depth = 10.0;
    const OpticalField f = two_inclusion_phantom(mesh, spec);
    for (int i = 0; i < mesh.node_count(); ++i) {
      const int j = nearest_node(mesh, {-mesh.nodes[i].x, mesh.nodes[i].y});
      CHECK(f.mua[i] == f.mua[j]);
      CHECK(f.musp[i] == f.musp[j]);
    }
  }

  SUBCASE("invalid geometries are rejected") {
    PhantomSpec too_deep;
    too_deep.separation = 30.0;
    too_deep.depth = 65.0;
    too_deep.convention = DepthConvention::CenterDepth;
    CHECK_THROWS_AS(two_inclusion_phantom(mesh, too_deep),
                    std::invalid_argument);
  }
}

TEST_CASE("phantom JSON round-trip") {
  PhantomSpec spec;
  spec.separation = 30.0;
  spec.depth = 40.0;
  spec.contrast = 2.0;
  spec.convention = DepthConvention::CenterDepth;
  const PhantomSpec back = phantom_from_json(phantom_to_json(spec));
  CHECK(back.separation == spec.separation);
  CHECK(back.depth == spec.depth);
  CHECK(back.contrast == spec.contrast);
  CHECK(back.convention == spec.convention);
  CHECK(back.mua0 == spec.mua0);
}

TEST_CASE("field validation catches shape and sign errors") {
  const Mesh mesh = build_disk_mesh(MeshSpec{20.0, 4.0, 6.0});
  OpticalField f = homogeneous_disk(mesh, 0.02, 0.67, 1.4);
  f.mua[0] = -1.0;
  CHECK_THROWS_AS(f.validate(mesh), std::invalid_argument);
  OpticalField g = homogeneous_disk(mesh, 0.02, 0.67, 1.4);
  g.mua.conservativeResize(3);
  CHECK_THROWS_AS(g.validate(mesh), std::invalid_argument);
}
