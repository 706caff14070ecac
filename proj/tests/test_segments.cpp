#include <doctest.h>

#include "mtl/segments.hpp"

using namespace mtl;

TEST_CASE("split_segments covers the frames exactly once") {
  SegmentPlan plan = split_segments(500, 250, "a");
  REQUIRE(plan.segments.size() == 2);
  CHECK(plan.segments[0].length() == 250);
  CHECK(plan.segments[1].length() == 250);

  plan = split_segments(130, 64);
  REQUIRE(plan.segments.size() == 3);
  CHECK(plan.segments[0].length() == 64);
  CHECK(plan.segments[1].length() == 64);
  CHECK(plan.segments[2].length() == 2);

  plan = split_segments(10, 250);
  REQUIRE(plan.segments.size() == 1);
  CHECK(plan.segments[0].length() == 10);
}

TEST_CASE("split_segments invariants hold over random sizes") {
  for (std::size_t n : {1u, 2u, 63u, 64u, 65u, 128u, 129u, 999u})
    for (std::size_t l : {1u, 2u, 64u, 250u}) {
      SegmentPlan plan = split_segments(n, l);
      CHECK(plan.segments.size() == (n + l - 1) / l);  // ceil(n/l)
      std::size_t expected_begin = 0;
      for (std::size_t i = 0; i < plan.segments.size(); ++i) {
        const SegmentRange& seg = plan.segments[i];
        CHECK(seg.begin == expected_begin);  // consecutive, no overlap
        CHECK(seg.length() >= 1);
        if (i + 1 < plan.segments.size()) CHECK(seg.length() == l);
        expected_begin = seg.end;
      }
      CHECK(expected_begin == n);  // full coverage
    }
}

TEST_CASE("degenerate inputs") {
  CHECK(split_segments(0, 64).segments.empty());
  CHECK_THROWS_AS(split_segments(10, 0), ConfigError);
}
