#include "normprior/modelzoo/container.hpp"

#include <charconv>
#include <cstring>

#include "normprior/error.hpp"
#include "normprior/text.hpp"

namespace normprior::modelzoo {

using nlohmann::ordered_json;

void write_container(const std::string& path, std::string_view magic, int version,
                     ordered_json header, const nn::ParameterStore& params) {
  ordered_json tensors = ordered_json::array();
  std::size_t bytes = 0;
  for (const auto& p : params) {
    tensors.push_back({{"name", p.name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"trainable", p.trainable},
                       {"sparse", p.sparse}});
    bytes += sizeof(float) * static_cast<std::size_t>(p.value.size());
  }
  header["tensors"] = std::move(tensors);
  header["weights_digest"] = params.digest();
  const std::string head = header.dump();

  std::string out;
  out.reserve(head.size() + bytes + 64);
  out.append(magic).append(" ").append(std::to_string(version)).append("\n");
  out.append(std::to_string(head.size())).append("\n");
  out.append(head).append("\n");
  for (const auto& p : params) {
    out.append(reinterpret_cast<const char*>(p.value.data()),
               sizeof(float) * static_cast<std::size_t>(p.value.size()));
  }
  text::write_file_atomic(path, out);
}

namespace {

[[noreturn]] void corrupt(const std::string& path, const std::string& why) {
  throw CorruptModelError(path + ": " + why);
}

std::string_view take_line(std::string_view data, std::size_t& pos, const std::string& path) {
  const auto nl = data.find('\n', pos);
  if (nl == std::string_view::npos) corrupt(path, "truncated header");
  auto line = data.substr(pos, nl - pos);
  pos = nl + 1;
  return line;
}

}  // namespace

Container read_container(const std::string& path, std::string_view magic, int version) {
  const std::string data = text::read_file(path);
  std::string_view view(data);
  std::size_t pos = 0;

  const std::string expected = std::string(magic) + " " + std::to_string(version);
  if (take_line(view, pos, path) != expected) corrupt(path, "not a " + std::string(magic) + " file");

  const auto len_line = take_line(view, pos, path);
  std::size_t head_len = 0;
  auto [end, ec] = std::from_chars(len_line.data(), len_line.data() + len_line.size(), head_len);
  if (ec != std::errc() || end != len_line.data() + len_line.size()) corrupt(path, "bad header length");
  if (pos + head_len + 1 > view.size()) corrupt(path, "truncated header");

  Container c;
  ordered_json header;
  try {
    header = ordered_json::parse(view.substr(pos, head_len));
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("unreadable header: ") + e.what());
  }
  pos += head_len;
  if (view[pos] != '\n') corrupt(path, "bad header terminator");
  ++pos;

  try {
    for (const auto& t : header.at("tensors")) {
      const auto rows = t.at("rows").get<nn::Index>();
      const auto cols = t.at("cols").get<nn::Index>();
      if (rows < 0 || cols < 0) corrupt(path, "negative tensor shape");
      const std::size_t n = static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols);
      if (n > (view.size() - pos) / sizeof(float)) corrupt(path, "truncated tensor data");
      nn::Matrix m(rows, cols);
      std::memcpy(m.data(), view.data() + pos, n * sizeof(float));
      pos += n * sizeof(float);
      c.params.add(t.at("name").get<std::string>(), std::move(m), t.at("sparse").get<bool>(),
                   t.at("trainable").get<bool>());
    }
    c.digest = header.at("weights_digest").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    corrupt(path, std::string("malformed header: ") + e.what());
  } catch (const ContractViolation& e) {
    corrupt(path, e.what());
  }
  if (pos != view.size()) corrupt(path, "trailing bytes after tensor data");
  if (c.params.digest() != c.digest) corrupt(path, "weights digest mismatch");

  header.erase("tensors");
  header.erase("weights_digest");
  c.header = std::move(header);
  return c;
}

}  // namespace normprior::modelzoo
