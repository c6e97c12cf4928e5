#include "pifield/scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace pifield {

namespace {

class SphereSdf final : public SceneSdf {
 public:
  SphereSdf(const Vec3& c, double r) : c_(c), r_(r) {
    if (r <= 0) throw ValueError("sphere: radius must be positive");
  }
  double sdf(const Vec3& p) const override { return norm(p - c_) - r_; }
  Box3 bounds() const override {
    return {c_ - Vec3{r_, r_, r_}, c_ + Vec3{r_, r_, r_}};
  }

 private:
  Vec3 c_;
  double r_;
};

class CapsuleSdf final : public SceneSdf {
 public:
  CapsuleSdf(const Vec3& a, const Vec3& b, double r) : a_(a), ab_(b - a), r_(r) {
    if (r <= 0) throw ValueError("capsule: radius must be positive");
    len2_ = norm2(ab_);
  }
  double sdf(const Vec3& p) const override {
    const Vec3 pa = p - a_;
    const double t = len2_ > 0 ? std::clamp(dot(pa, ab_) / len2_, 0.0, 1.0) : 0.0;
    return norm(pa - ab_ * t) - r_;
  }
  Box3 bounds() const override {
    Box3 b{a_, a_};
    b.grow(a_ + ab_);
    b.lo += Vec3{-r_, -r_, -r_};
    b.hi += Vec3{r_, r_, r_};
    return b;
  }

 private:
  Vec3 a_, ab_;
  double len2_, r_;
};

class BoxSdf final : public SceneSdf {
 public:
  BoxSdf(const Vec3& c, const Vec3& h) : c_(c), h_(h) {
    if (h.x <= 0 || h.y <= 0 || h.z <= 0)
      throw ValueError("box: half extents must be positive");
  }
  double sdf(const Vec3& p) const override {
    const Vec3 q{std::abs(p.x - c_.x) - h_.x, std::abs(p.y - c_.y) - h_.y,
                 std::abs(p.z - c_.z) - h_.z};
    const Vec3 qp{std::max(q.x, 0.0), std::max(q.y, 0.0), std::max(q.z, 0.0)};
    return norm(qp) + std::min(std::max({q.x, q.y, q.z}), 0.0);
  }
  Box3 bounds() const override { return {c_ - h_, c_ + h_}; }

 private:
  Vec3 c_, h_;
};

class UnionSdf final : public SceneSdf {
 public:
  UnionSdf(ScenePtr a, ScenePtr b) : a_(std::move(a)), b_(std::move(b)) {}
  double sdf(const Vec3& p) const override {
    return std::min(a_->sdf(p), b_->sdf(p));
  }
  Box3 bounds() const override {
    Box3 box = a_->bounds();
    box.grow(b_->bounds().lo);
    box.grow(b_->bounds().hi);
    return box;
  }

 private:
  ScenePtr a_, b_;
};

class SmoothUnionSdf final : public SceneSdf {
 public:
  SmoothUnionSdf(ScenePtr a, ScenePtr b, double k)
      : a_(std::move(a)), b_(std::move(b)), k_(k) {
    if (k <= 0) throw ValueError("smooth union: blend must be positive");
  }
  double sdf(const Vec3& p) const override {
    const double d1 = a_->sdf(p), d2 = b_->sdf(p);
    const double h = std::clamp(0.5 + 0.5 * (d2 - d1) / k_, 0.0, 1.0);
    return d2 + (d1 - d2) * h - k_ * h * (1.0 - h);
  }
  Box3 bounds() const override {
    Box3 box = a_->bounds();
    box.grow(b_->bounds().lo);
    box.grow(b_->bounds().hi);
    // The crease fill can stick out by up to k/4.
    const double m = 0.25 * k_;
    box.lo += Vec3{-m, -m, -m};
    box.hi += Vec3{m, m, m};
    return box;
  }

 private:
  ScenePtr a_, b_;
  double k_;
};

Vec3 parse_vec3(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3)
    throw ValueError(std::string("scene: '") + key + "' must be a 3-array");
  return {j[key][0].get<double>(), j[key][1].get<double>(), j[key][2].get<double>()};
}

}  // namespace

ScenePtr sdf_sphere(const Vec3& center, double radius) {
  return std::make_shared<SphereSdf>(center, radius);
}

ScenePtr sdf_capsule(const Vec3& a, const Vec3& b, double radius) {
  return std::make_shared<CapsuleSdf>(a, b, radius);
}

ScenePtr sdf_box(const Vec3& center, const Vec3& half_extents) {
  return std::make_shared<BoxSdf>(center, half_extents);
}

ScenePtr sdf_union(ScenePtr a, ScenePtr b) {
  if (!a || !b) throw ValueError("union: null operand");
  return std::make_shared<UnionSdf>(std::move(a), std::move(b));
}

ScenePtr sdf_smooth_union(ScenePtr a, ScenePtr b, double blend) {
  if (!a || !b) throw ValueError("smooth union: null operand");
  return std::make_shared<SmoothUnionSdf>(std::move(a), std::move(b), blend);
}

Vec3 sdf_normal(const SceneSdf& s, const Vec3& p, double h) {
  const Vec3 g{s.sdf({p.x + h, p.y, p.z}) - s.sdf({p.x - h, p.y, p.z}),
               s.sdf({p.x, p.y + h, p.z}) - s.sdf({p.x, p.y - h, p.z}),
               s.sdf({p.x, p.y, p.z + h}) - s.sdf({p.x, p.y, p.z - h})};
  const double n = norm(g);
  if (n < 1e-14) return {0, 0, 0};
  return g / n;
}

ScenePtr parse_scene_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ValueError(std::string("scene: bad JSON: ") + e.what());
  }
  if (!j.contains("primitives") || !j["primitives"].is_array() ||
      j["primitives"].empty())
    throw ValueError("scene: needs a non-empty 'primitives' array");
  const double blend = j.value("blend", 0.0);
  if (blend < 0) throw ValueError("scene: blend must be >= 0");

  ScenePtr acc;
  for (const auto& prim : j["primitives"]) {
    const std::string type = prim.value("type", "");
    ScenePtr s;
    if (type == "sphere") {
      s = sdf_sphere(parse_vec3(prim, "center"), prim.value("radius", 0.0));
    } else if (type == "capsule") {
      s = sdf_capsule(parse_vec3(prim, "a"), parse_vec3(prim, "b"),
                      prim.value("radius", 0.0));
    } else if (type == "box") {
      s = sdf_box(parse_vec3(prim, "center"), parse_vec3(prim, "half_extents"));
    } else {
      throw ValueError("scene: unknown primitive type '" + type + "'");
    }
    if (!acc)
      acc = s;
    else
      acc = blend > 0 ? sdf_smooth_union(acc, s, blend) : sdf_union(acc, s);
  }
  return acc;
}

ScenePtr load_scene_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("scene: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scene_json(ss.str());
}

}  // namespace pifield
