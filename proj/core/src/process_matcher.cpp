#include "leica/process_matcher.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <cstring>

#include "json.hpp"
#include "leica/errors.hpp"

namespace leica {

namespace {

void write_all(int fd, const std::string& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Error("matcher process: write failed: " + std::string(std::strerror(errno)));
    }
    done += static_cast<std::size_t>(n);
  }
}

}  // namespace

ProcessMatcher::ProcessMatcher(std::string command) : command_(std::move(command)) {
  int in_pipe[2], out_pipe[2];
  if (::pipe(in_pipe) != 0 || ::pipe(out_pipe) != 0) throw Error("matcher process: pipe failed");
  pid_ = ::fork();
  if (pid_ < 0) throw Error("matcher process: fork failed");
  if (pid_ == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  // A dead child must surface as an exception, not SIGPIPE.
  ::signal(SIGPIPE, SIG_IGN);

  std::string tmpl = (std::filesystem::temp_directory_path() / "leica-matcher-XXXXXX").string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw Error("matcher process: cannot create scratch dir");
  scratch_ = tmpl;
}

ProcessMatcher::~ProcessMatcher() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
  std::error_code ec;
  std::filesystem::remove_all(scratch_, ec);
}

SemanticMap ProcessMatcher::request(const Caption& caption, const std::filesystem::path& image) const {
  nlohmann::json req = {{"caption", caption.raw}, {"image", image.string()}};
  write_all(to_child_, req.dump() + "\n");

  std::string line;
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      break;
    }
    char buf[4096];
    const ssize_t n = ::read(from_child_, buf, sizeof buf);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error("matcher process exited without a response");
    pending_.append(buf, static_cast<std::size_t>(n));
  }

  nlohmann::json resp;
  try {
    resp = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("matcher process: malformed response: ") + e.what());
  }
  if (resp.contains("error")) throw Error("matcher process: " + resp["error"].get<std::string>());
  if (!resp.contains("phi") || !resp.contains("psi") || !resp["phi"].is_array()) {
    throw FormatError("matcher process: response needs 'phi' and 'psi'");
  }
  SemanticMap map;
  map.phi = resp["phi"].get<std::vector<double>>();
  map.psi = resp["psi"].get<double>();
  const auto s = static_cast<int>(std::lround(std::sqrt(static_cast<double>(map.phi.size()))));
  if (s < 1 || static_cast<std::size_t>(s) * s != map.phi.size()) {
    throw ShapeError("matcher process: phi length is not a perfect square");
  }
  map.s = s;
  return map;
}

SemanticMap ProcessMatcher::align_file(const Caption& caption, const std::filesystem::path& image) const {
  std::lock_guard lock(mu_);
  return request(caption, std::filesystem::absolute(image));
}

SemanticMap ProcessMatcher::patch_alignment(const Caption& caption, const ImageTensor& img) const {
  std::lock_guard lock(mu_);
  const auto path = scratch_ / ("image-" + std::to_string(counter_++) + ".ppm");
  write_ppm(img, path);
  SemanticMap map = request(caption, path);
  std::filesystem::remove(path);
  return map;
}

}  // namespace leica
