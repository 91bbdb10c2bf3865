#pragma once

namespace haf {

enum class CoordinateMode { kGeo, kPlanar };

// (lat, lon) in degrees for kGeo, (x, y) in meters for kPlanar.
struct GeoPoint {
  double a = 0.0;
  double b = 0.0;

  bool operator==(const GeoPoint&) const = default;
};

inline constexpr double kEarthRadiusMeters = 6371008.8;

double haversine_m(double lat1, double lon1, double lat2, double lon2);
double geo_distance_m(const GeoPoint& p, const GeoPoint& q, CoordinateMode mode);

// Offsets a geographic point by (east, north) meters (local tangent plane).
GeoPoint offset_geo(const GeoPoint& origin, double east_m, double north_m);

}  // namespace haf
