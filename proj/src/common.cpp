#include "mrd/common.hpp"

#include "mrd/error.hpp"

namespace mrd {

std::string_view view_name(View v) {
  switch (v) {
    case View::kText: return "text";
    case View::kImage: return "image";
    case View::kCross: return "cross";
  }
  return "?";
}

View parse_view(std::string_view name) {
  if (name == "text") return View::kText;
  if (name == "image") return View::kImage;
  if (name == "cross") return View::kCross;
  throw FormatError("unknown view '" + std::string(name) + "'");
}

std::string_view corruption_name(Corruption c) {
  switch (c) {
    case Corruption::kNone: return "none";
    case Corruption::kTextFabrication: return "text-fabrication";
    case Corruption::kImageArtifact: return "image-artifact";
    case Corruption::kCrossMismatch: return "cross-mismatch";
  }
  return "?";
}

Corruption parse_corruption(std::string_view name) {
  for (auto c : {Corruption::kNone, Corruption::kTextFabrication, Corruption::kImageArtifact,
                 Corruption::kCrossMismatch}) {
    if (corruption_name(c) == name) return c;
  }
  throw ParameterError("unknown corruption type '" + std::string(name) + "'");
}

std::optional<View> corruption_target(Corruption c) {
  switch (c) {
    case Corruption::kTextFabrication: return View::kText;
    case Corruption::kImageArtifact: return View::kImage;
    case Corruption::kCrossMismatch: return View::kCross;
    default: return std::nullopt;
  }
}

ClassifierHead make_head(ParameterStore& store, const std::string& prefix, std::size_t in) {
  return ClassifierHead{store.add(prefix + ".weight", {in, kNumClasses}, InitScheme::kXavierUniform),
                        store.add(prefix + ".bias", {kNumClasses}, InitScheme::kZeros)};
}

}  // namespace mrd
