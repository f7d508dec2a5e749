#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "dynslam/core.hpp"

namespace dynslam
{

/// Plain-text `key = value` file. `#` starts a comment; repeated keys are kept in order.
class KeyValueFile
{
public:
  static KeyValueFile parse(std::string_view text, const std::string &origin = "<string>")
  {
    KeyValueFile kv;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      const std::string t = trim(line);
      if (t.empty())
        continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw usage_error(origin + ":" + std::to_string(lineno) + ": expected `key = value`");
      std::string key = trim(t.substr(0, eq));
      if (key.empty())
        throw usage_error(origin + ":" + std::to_string(lineno) + ": empty key");
      kv.entries_.emplace_back(std::move(key), trim(t.substr(eq + 1)));
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path &path)
  {
    std::ifstream f(path);
    if (!f)
      throw usage_error("cannot read config file: " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path.string());
  }

  bool has(const std::string &key) const
  {
    for (const auto &e : entries_)
      if (e.first == key)
        return true;
    return false;
  }

  /// Last occurrence wins.
  const std::string *find(const std::string &key) const
  {
    const std::string *v = nullptr;
    for (const auto &e : entries_)
      if (e.first == key)
        v = &e.second;
    return v;
  }

  std::vector<std::string> all(const std::string &key) const
  {
    std::vector<std::string> out;
    for (const auto &e : entries_)
      if (e.first == key)
        out.push_back(e.second);
    return out;
  }

  void set(const std::string &key, const std::string &value)
  {
    for (auto it = entries_.begin(); it != entries_.end();)
      it = it->first == key ? entries_.erase(it) : it + 1;
    entries_.emplace_back(key, value);
  }

  void add(const std::string &key, const std::string &value) { entries_.emplace_back(key, value); }

  const std::vector<std::pair<std::string, std::string>> &entries() const noexcept { return entries_; }

  template <typename T>
  void get(const std::string &key, T &out) const
  {
    if (const std::string *v = find(key))
      out = convert<T>(key, *v);
  }

  template <typename T>
  static T convert(const std::string &key, const std::string &v)
  {
    if constexpr (std::is_same_v<T, std::string>)
      return v;
    else if constexpr (std::is_same_v<T, std::filesystem::path>)
      return std::filesystem::path(v);
    else if constexpr (std::is_same_v<T, bool>)
    {
      if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
      if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
      throw usage_error("config key `" + key + "`: expected boolean, got `" + v + "`");
    }
    else if constexpr (std::is_floating_point_v<T>)
    {
      try
      {
        size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size())
          throw std::invalid_argument(v);
        return static_cast<T>(d);
      }
      catch (const std::exception &)
      {
        throw usage_error("config key `" + key + "`: expected number, got `" + v + "`");
      }
    }
    else if constexpr (std::is_integral_v<T>)
    {
      T out{};
      auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
      if (ec != std::errc() || p != v.data() + v.size())
        throw usage_error("config key `" + key + "`: expected integer, got `" + v + "`");
      return out;
    }
    else
    {
      static_assert(sizeof(T) == 0, "unsupported config type");
    }
  }

  static std::vector<double> numbers(const std::string &key, const std::string &v)
  {
    std::istringstream in(v);
    std::vector<double> out;
    std::string tok;
    while (in >> tok)
      out.push_back(convert<double>(key, tok));
    return out;
  }

  static Eigen::Vector3d vec3(const std::string &key, const std::string &v)
  {
    const auto n = numbers(key, v);
    if (n.size() != 3)
      throw usage_error("config key `" + key + "`: expected 3 numbers");
    return {n[0], n[1], n[2]};
  }

  std::string to_string() const
  {
    std::ostringstream out;
    for (const auto &[k, v] : entries_)
      out << k << " = " << v << "\n";
    return out.str();
  }

private:
  static std::string trim(const std::string &s)
  {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos)
      return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::vector<std::pair<std::string, std::string>> entries_;
};

inline std::string format_double(double v)
{
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

inline std::string format_vec3(const Eigen::Vector3d &v)
{
  return format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z());
}

} // namespace dynslam
