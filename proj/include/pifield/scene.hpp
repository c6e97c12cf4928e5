#pragma once

#include <memory>
#include <string>

#include "pifield/common.hpp"

namespace pifield {

// Analytic signed-distance scene: meters, negative inside, 1-Lipschitz.
class SceneSdf {
 public:
  virtual ~SceneSdf() = default;
  virtual double sdf(const Vec3& p) const = 0;
  // Conservative: the surface never leaves this box.
  virtual Box3 bounds() const = 0;
};
using ScenePtr = std::shared_ptr<const SceneSdf>;

ScenePtr sdf_sphere(const Vec3& center, double radius);
ScenePtr sdf_capsule(const Vec3& a, const Vec3& b, double radius);
ScenePtr sdf_box(const Vec3& center, const Vec3& half_extents);
ScenePtr sdf_union(ScenePtr a, ScenePtr b);
// Polynomial smooth minimum. Bulges at most blend/4 outside the hard union
// and stays 1-Lipschitz.
ScenePtr sdf_smooth_union(ScenePtr a, ScenePtr b, double blend);

// Central-difference gradient, normalized.
Vec3 sdf_normal(const SceneSdf& s, const Vec3& p, double h = 1e-4);

// {"primitives":[{"type":"sphere","center":[x,y,z],"radius":r},
//                {"type":"capsule","a":[...],"b":[...],"radius":r},
//                {"type":"box","center":[...],"half_extents":[...]}],
//  "blend": 0.0}
// blend > 0 folds the primitives with smooth union, else hard union.
ScenePtr load_scene_json(const std::string& path);
ScenePtr parse_scene_json(const std::string& text);

}  // namespace pifield
