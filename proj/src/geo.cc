#include "haf/geo.h"

#include <cmath>
#include <numbers>

namespace haf {
namespace {
constexpr double kDegToRad = std::numbers::pi / 180.0;
}

double haversine_m(double lat1, double lon1, double lat2, double lon2) {
  const double phi1 = lat1 * kDegToRad;
  const double phi2 = lat2 * kDegToRad;
  const double dphi = (lat2 - lat1) * kDegToRad;
  const double dlambda = (lon2 - lon1) * kDegToRad;
  const double s1 = std::sin(dphi / 2.0);
  const double s2 = std::sin(dlambda / 2.0);
  const double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  return 2.0 * kEarthRadiusMeters * std::asin(std::min(1.0, std::sqrt(h)));
}

double geo_distance_m(const GeoPoint& p, const GeoPoint& q, CoordinateMode mode) {
  if (mode == CoordinateMode::kPlanar) return std::hypot(p.a - q.a, p.b - q.b);
  return haversine_m(p.a, p.b, q.a, q.b);
}

GeoPoint offset_geo(const GeoPoint& origin, double east_m, double north_m) {
  const double dlat = north_m / kEarthRadiusMeters / kDegToRad;
  const double dlon = east_m / (kEarthRadiusMeters * std::cos(origin.a * kDegToRad)) / kDegToRad;
  return {origin.a + dlat, origin.b + dlon};
}

}  // namespace haf
