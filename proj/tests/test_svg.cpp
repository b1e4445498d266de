#include <doctest.h>
#include <initializer_list>

#include <cctype>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <nica/svg.hpp>
#include <nica/common.hpp>

using namespace nica;

namespace {

std::size_t count_occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t at = hay.find(needle); at != std::string::npos;
       at = hay.find(needle, at + needle.size())) {
    ++n;
  }
  return n;
}

// Minimal well-formedness scan: balanced tags, quoted attributes, and no raw
// markup characters in text content.  Returns an empty string when clean, or
// a short description of the first problem.
std::string xml_problem(const std::string& doc) {
  std::vector<std::string> stack;
  std::size_t i = 0;
  // Optional prolog.
  if (doc.rfind("<?xml", 0) == 0) {
    std::size_t end = doc.find("?>");
    if (end == std::string::npos) return "unterminated prolog";
    i = end + 2;
  }
  while (i < doc.size()) {
    char c = doc[i];
    if (c == '<') {
      std::size_t close = doc.find('>', i);
      if (close == std::string::npos) return "unterminated tag";
      std::string tag = doc.substr(i + 1, close - i - 1);
      if (!tag.empty() && tag[0] == '/') {
        std::string name = tag.substr(1);
        if (stack.empty()) return "close without open: " + name;
        if (stack.back() != name)
          return "mismatched close: " + name + " vs " + stack.back();
        stack.pop_back();
      } else {
        bool self_closing = !tag.empty() && tag.back() == '/';
        if (self_closing) tag.pop_back();
        std::size_t name_end = tag.find_first_of(" \t\n");
        std::string name = tag.substr(0, name_end);
        if (name.empty()) return "empty tag name";
        // Attribute quotes must pair up.
        std::size_t quotes = 0;
        for (char a : tag)
          if (a == '"') ++quotes;
        if (quotes % 2 != 0) return "unbalanced quotes in <" + name + ">";
        if (!self_closing) stack.push_back(name);
      }
      i = close + 1;
    } else if (c == '>') {
      return "stray '>' in text";
    } else if (c == '&') {
      static const char* entities[] = {"&amp;", "&lt;", "&gt;", "&quot;"};
      bool ok = false;
      for (const char* e : entities)
        if (doc.compare(i, std::string(e).size(), e) == 0) ok = true;
      if (!ok) return "unescaped '&' in text";
      ++i;
    } else {
      ++i;
    }
  }
  if (!stack.empty()) return "unclosed tag: " + stack.back();
  return "";
}

SvgSeries make_series(const std::string& label, std::vector<double> x,
                      std::vector<double> y) {
  SvgSeries s;
  s.label = label;
  s.x = std::move(x);
  s.y = std::move(y);
  return s;
}

}  // namespace

TEST_CASE("charts are well-formed self-contained XML documents") {
  SvgSeries a = make_series("first", {0, 1, 2, 3}, {1.0, 0.5, 0.25, 0.125});
  SvgSeries b = make_series("second", {0, 1, 2, 3}, {-1.0, 0.0, 1.0, 2.0});
  b.color = "#d62728";
  b.markers = true;
  std::string doc = line_chart_svg("objective", "step", "value", {a, b});

  CHECK(xml_problem(doc) == "");
  CHECK(doc.rfind("<?xml", 0) == 0);
  CHECK(doc.find("<svg xmlns=\"http://www.w3.org/2000/svg\"") != std::string::npos);
  CHECK(count_occurrences(doc, "<polyline") == 2);
  CHECK(count_occurrences(doc, "<circle") == 4);  // markers only on b
  CHECK(doc.find(">objective<") != std::string::npos);
  CHECK(doc.find(">step<") != std::string::npos);
  CHECK(doc.find(">value<") != std::string::npos);
  CHECK(doc.find(">first<") != std::string::npos);
  CHECK(doc.find(">second<") != std::string::npos);
  CHECK(doc.find("#d62728") != std::string::npos);
  CHECK(doc.find("nan") == std::string::npos);
  CHECK(doc.find("inf") == std::string::npos);
}

TEST_CASE("labels with markup characters are escaped") {
  SvgSeries s = make_series("a<b & \"c\">d", {0, 1}, {0, 1});
  std::string doc = line_chart_svg("x < y & z", "in", "out", {s});
  CHECK(xml_problem(doc) == "");
  CHECK(doc.find("x &lt; y &amp; z") != std::string::npos);
  CHECK(doc.find("a&lt;b &amp; &quot;c&quot;&gt;d") != std::string::npos);
}

TEST_CASE("degenerate data still renders finite coordinates") {
  // Constant series: both axes would have zero span without widening.
  SvgSeries flat = make_series("flat", {2, 2, 2}, {7, 7, 7});
  std::string doc = line_chart_svg("t", "x", "y", {flat});
  CHECK(xml_problem(doc) == "");
  CHECK(doc.find("nan") == std::string::npos);

  // Single point.
  std::string doc1 =
      line_chart_svg("t", "x", "y", {make_series("p", {0.5}, {-0.25})});
  CHECK(xml_problem(doc1) == "");
  CHECK(doc1.find("nan") == std::string::npos);

  // Empty series and non-finite values: skipped, not drawn.
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  SvgSeries holes = make_series("holes", {0, 1, 2, 3}, {0.0, nan, inf, 1.0});
  std::string doc2 =
      line_chart_svg("t", "x", "y", {make_series("none", {}, {}), holes});
  CHECK(xml_problem(doc2) == "");
  CHECK(doc2.find("nan") == std::string::npos);
  CHECK(doc2.find("inf") == std::string::npos);

  // All data non-finite: falls back to a default viewport.
  std::string doc3 = line_chart_svg("t", "x", "y", {make_series("gone", {nan}, {nan})});
  CHECK(xml_problem(doc3) == "");
  CHECK(doc3.find("nan") == std::string::npos);
}

TEST_CASE("bad chart inputs are rejected") {
  CHECK_THROWS_AS(line_chart_svg("t", "x", "y", {}), Error);
  CHECK_THROWS_AS(
      line_chart_svg("t", "x", "y", {make_series("m", {0, 1}, {0.0})}), Error);
}
