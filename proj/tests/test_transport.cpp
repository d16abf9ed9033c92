#include <doctest.h>

#include <algorithm>

#include "ncf/error.hpp"
#include "ncf/transport.hpp"
#include "support.hpp"

using namespace ncf;

namespace {

constexpr double kLambda = kCovarianceRegularizer;

Moments random_moments(Rng& rng) {
  Moments m;
  m.mean = Vec3(uniform(rng, 0, 100), uniform(rng, -80, 80), uniform(rng, -80, 80));
  m.cov = test::random_spd(rng);
  return m;
}

LabImage random_lab(Rng& rng, int w, int h) {
  LabImage img(w, h);
  for (auto& p : img.pixels) p = Vec3(uniform(rng, 0, 100), uniform(rng, -60, 60), uniform(rng, -60, 60));
  return img;
}

}  // namespace

TEST_CASE("image_moments examples") {
  const LabImage flat(4, 3, Vec3(40, 5, -7));
  const Moments m = image_moments(flat);
  CHECK((m.mean - Vec3(40, 5, -7)).norm() <= 1e-12);
  CHECK((m.cov - kLambda * Mat3::Identity()).norm() <= 1e-12);

  LabImage two(2, 1);
  two.pixels[0] = Vec3(0, 0, 0);
  two.pixels[1] = Vec3(2, 0, 0);
  const Moments t = image_moments(two);
  CHECK(t.mean == Vec3(1, 0, 0));
  Mat3 expected = kLambda * Mat3::Identity();
  expected(0, 0) += 1.0;
  CHECK((t.cov - expected).norm() <= 1e-15);
}

TEST_CASE("image_moments is invariant to pixel permutation") {
  Rng rng(3);
  LabImage img = random_lab(rng, 9, 7);
  const Moments a = image_moments(img);
  std::reverse(img.pixels.begin(), img.pixels.end());
  std::rotate(img.pixels.begin(), img.pixels.begin() + 17, img.pixels.end());
  const Moments b = image_moments(img);
  CHECK((a.mean - b.mean).norm() <= 1e-12 * a.mean.norm());
  CHECK((a.cov - b.cov).norm() <= 1e-12 * a.cov.norm());
}

TEST_CASE("masked image_moments") {
  LabImage img(3, 1);
  img.pixels = {Vec3(10, 0, 0), Vec3(20, 0, 0), Vec3(90, 50, 50)};
  SegmentationMask mask(3, 1, 4);
  mask.labels[2] = 7;
  const Moments m = image_moments(img, mask, 4);
  CHECK(m.mean == Vec3(15, 0, 0));
  CHECK(m.cov(0, 0) == doctest::Approx(25.0 + kLambda));
  CHECK_THROWS_WITH_AS(image_moments(img, mask, 5), doctest::Contains("EmptyMask"), Error);
  CHECK_THROWS_WITH_AS(image_moments(img, SegmentationMask(2, 2), 0), doctest::Contains("ShapeMismatch"), Error);
}

TEST_CASE("spd_sqrt examples") {
  const Mat3 d = Vec3(4, 9, 16).asDiagonal();
  CHECK((spd_sqrt(d) - Mat3(Vec3(2, 3, 4).asDiagonal())).norm() <= 1e-12);
  CHECK((spd_sqrt(Mat3::Identity()) - Mat3::Identity()).norm() <= 1e-15);
  const SpdRoots r = spd_roots(d);
  CHECK((r.inv_sqrt - Mat3(Vec3(0.5, 1.0 / 3.0, 0.25).asDiagonal())).norm() <= 1e-12);
}

TEST_CASE("spd_sqrt squares back on 1000 random SPD matrices") {
  Rng rng(1000);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Mat3 a = test::random_spd(rng, 1e-4, 1e4);
    const Mat3 s = spd_sqrt(a);
    CHECK((s - s.transpose()).norm() <= 1e-12 * s.norm());
    worst = std::max(worst, test::rel_frobenius(s * s, a));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("spd_sqrt rejects non-SPD input") {
  Mat3 asym = Mat3::Identity();
  asym(0, 1) = 0.5;
  CHECK_THROWS_WITH_AS(spd_sqrt(asym), doctest::Contains("NotSPD"), Error);
  CHECK_THROWS_WITH_AS(spd_sqrt(Mat3(Vec3(1, -1, 1).asDiagonal())), doctest::Contains("NotSPD"), Error);
  CHECK_THROWS_WITH_AS(spd_sqrt(Mat3(Vec3(1, 0, 1).asDiagonal())), doctest::Contains("NotSPD"), Error);
  Moments bad;
  bad.cov = Vec3(1, -2, 1).asDiagonal();
  CHECK_THROWS_AS(mk_transfer(bad, Moments{}), Error);
}

TEST_CASE("mk_transfer examples") {
  Rng rng(7);
  Moments id;
  id.cov = Mat3::Identity();
  const Moments dst = random_moments(rng);
  CHECK(test::rel_frobenius(mk_transfer(id, dst).m, spd_sqrt(dst.cov)) <= 1e-12);

  Moments a, b;
  a.cov = Vec3(4, 1, 1).asDiagonal();
  b.cov = Vec3(9, 1, 1).asDiagonal();
  // For commuting diagonals the formula reduces to sqrt(dst / src) per axis.
  CHECK((mk_transfer(a, b).m - Mat3(Vec3(1.5, 1, 1).asDiagonal())).norm() <= 1e-12);
}

TEST_CASE("mk_transfer satisfies the covariance constraint and has positive eigenvalues") {
  Rng rng(55);
  for (int i = 0; i < 500; ++i) {
    const Moments src = random_moments(rng), dst = random_moments(rng);
    const TransferMatrix t = mk_transfer(src, dst);
    CHECK(transfer_residual(t, src.cov, dst.cov) <= 1e-8);
    CHECK(test::rel_frobenius(t.m * src.cov * t.m.transpose(), dst.cov) <= 1e-8);
    CHECK((t.m - t.m.transpose()).norm() <= 1e-9 * t.m.norm());
    const Eigen::Vector3cd eig = t.m.eigenvalues();
    for (int k = 0; k < 3; ++k) CHECK(eig[k].real() > 0.0);
  }
}

TEST_CASE("self-transfer is the identity") {
  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const Moments m = random_moments(rng);
    CHECK((mk_transfer(m, m).m - Mat3::Identity()).cwiseAbs().maxCoeff() <= 1e-9);
  }
}

TEST_CASE("apply_transfer examples") {
  Rng rng(4);
  const LabImage img = random_lab(rng, 6, 5);
  const Moments m = image_moments(img);
  CHECK(apply_transfer(img, TransferMatrix{}, m.mean, m.mean) == img);

  LabImage one(1, 1, Vec3(10, 2, 3));
  const LabImage out = apply_transfer(one, {Mat3(Vec3(1.5, 1, 1).asDiagonal())}, Vec3::Zero(), Vec3::Zero());
  CHECK(out.pixels[0] == Vec3(15, 2, 3));
}

TEST_CASE("apply_transfer propagates moments") {
  Rng rng(12);
  for (int i = 0; i < 20; ++i) {
    const LabImage img = random_lab(rng, 16, 12);
    const Moments src = image_moments(img);
    const Moments dst = random_moments(rng);
    const TransferMatrix t = mk_transfer(src, dst);
    const Moments out = image_moments(apply_transfer(img, t, src.mean, dst.mean));
    const Mat3 raw_src = src.cov - kLambda * Mat3::Identity();
    const Mat3 expected = t.m * raw_src * t.m.transpose() + kLambda * Mat3::Identity();
    CHECK((out.mean - dst.mean).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((out.cov - expected).cwiseAbs().maxCoeff() <= 1e-6 * std::max(1.0, expected.norm()));
  }
}

TEST_CASE("apply_transfer is affine in the pixels") {
  Rng rng(19);
  const LabImage a = random_lab(rng, 5, 5), b = random_lab(rng, 5, 5);
  const TransferMatrix t{test::random_spd(rng, 0.5, 2.0)};
  const Vec3 mu_s(50, 0, 0), mu_d(40, 10, -10);
  const double alpha = 0.3;
  LabImage mix(5, 5);
  for (std::size_t i = 0; i < mix.size(); ++i) mix.pixels[i] = alpha * a.pixels[i] + (1 - alpha) * b.pixels[i];
  const LabImage ta = apply_transfer(a, t, mu_s, mu_d), tb = apply_transfer(b, t, mu_s, mu_d);
  const LabImage tm = apply_transfer(mix, t, mu_s, mu_d);
  for (std::size_t i = 0; i < mix.size(); ++i) {
    CHECK((tm.pixels[i] - (alpha * ta.pixels[i] + (1 - alpha) * tb.pixels[i])).norm() <= 1e-10);
  }
}

TEST_CASE("mix_moments equals the moments of the pooled points") {
  Rng rng(2);
  std::vector<Vec3> p1, p2, all;
  for (int i = 0; i < 30; ++i) p1.emplace_back(uniform(rng, 0, 50), uniform(rng, -20, 20), uniform(rng, -20, 20));
  for (int i = 0; i < 90; ++i) p2.emplace_back(uniform(rng, 50, 100), uniform(rng, 0, 60), uniform(rng, -60, 0));
  all = p1;
  all.insert(all.end(), p2.begin(), p2.end());
  const std::pair<double, Moments> parts[] = {{0.25, moments_of_points(p1)}, {0.75, moments_of_points(p2)}};
  const Moments mixed = mix_moments(parts);
  const Moments pooled = moments_of_points(all);
  CHECK((mixed.mean - pooled.mean).norm() <= 1e-10);
  CHECK((mixed.cov - pooled.cov).norm() <= 1e-9 * pooled.cov.norm());
}
