#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "mrd/diffcore/ops.hpp"
#include "mrd/diffcore/parameter.hpp"

namespace mrd {

// The three analysis perspectives, in the fixed order used everywhere
// (concatenation, stacking, file records).
enum class View { kText = 0, kImage = 1, kCross = 2 };

inline constexpr std::array<View, 3> kAllViews = {View::kText, View::kImage, View::kCross};

std::string_view view_name(View v);
View parse_view(std::string_view name);

// One value per view, indexable by View.
template <class T>
struct PerView {
  T text{};
  T image{};
  T cross{};

  T& operator[](View v) {
    switch (v) {
      case View::kText: return text;
      case View::kImage: return image;
      default: return cross;
    }
  }
  const T& operator[](View v) const {
    switch (v) {
      case View::kText: return text;
      case View::kImage: return image;
      default: return cross;
    }
  }
};

// Falsity types. Each fake sample carries exactly one; it targets one view.
enum class Corruption { kNone = 0, kTextFabrication = 1, kImageArtifact = 2, kCrossMismatch = 3 };

std::string_view corruption_name(Corruption c);
// Throws ParameterError on an unknown name.
Corruption parse_corruption(std::string_view name);
// The view a corruption type is planted in; nullopt for kNone.
std::optional<View> corruption_target(Corruption c);

// Labels: 0 = real, 1 = fake.
inline constexpr int kReal = 0;
inline constexpr int kFake = 1;
inline constexpr std::size_t kNumClasses = 2;

// Affine d -> 2 classifier.
struct ClassifierHead {
  Tensor weight;
  Tensor bias;

  Tensor logits(const Tensor& x) const { return linear(x, weight, bias); }
};

ClassifierHead make_head(ParameterStore& store, const std::string& prefix, std::size_t in);

}  // namespace mrd
