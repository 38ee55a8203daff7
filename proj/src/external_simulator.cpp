#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <deque>
#include <map>
#include <nlohmann/json.hpp>

#include "wavecal/error.hpp"
#include "wavecal/simulator.hpp"

extern char** environ;

namespace wavecal {
namespace {

using Clock = std::chrono::steady_clock;

struct Child {
  pid_t pid = -1;
  int in_fd = -1;   // our end of the child's stdin (socket, so writes can skip SIGPIPE)
  int out_fd = -1;  // our end of the child's stdout
  std::string wbuf, rbuf;
  std::deque<long long> inflight;  // oldest first
  bool alive = false;
  int status = 0;
};

struct Pending {
  std::size_t point = 0;
  std::size_t child = 0;
  Clock::time_point deadline;
};

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

Child spawn(const std::string& command, const std::vector<std::string>& env_strings) {
  int sv[2];
  int out[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, sv) != 0) throw SimulatorError("socketpair failed");
  if (::pipe2(out, O_CLOEXEC) != 0) {
    ::close(sv[0]);
    ::close(sv[1]);
    throw SimulatorError("pipe failed");
  }
  std::vector<char*> envp;
  for (const auto& s : env_strings) envp.push_back(const_cast<char*>(s.c_str()));
  envp.push_back(nullptr);
  const char* argv[] = {"sh", "-c", command.c_str(), nullptr};

  const pid_t pid = ::fork();
  if (pid < 0) throw SimulatorError(std::string("fork failed: ") + std::strerror(errno));
  if (pid == 0) {
    ::dup2(sv[1], 0);
    ::dup2(out[1], 1);
    ::execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
    ::_exit(127);
  }
  ::close(sv[1]);
  ::close(out[1]);
  Child c;
  c.pid = pid;
  c.in_fd = sv[0];
  c.out_fd = out[0];
  c.alive = true;
  set_nonblocking(c.in_fd);
  set_nonblocking(c.out_fd);
  return c;
}

void close_child(Child& c, bool kill_it) {
  if (c.in_fd >= 0) ::close(c.in_fd);
  if (c.out_fd >= 0) ::close(c.out_fd);
  c.in_fd = c.out_fd = -1;
  if (c.pid > 0) {
    if (kill_it) ::kill(c.pid, SIGKILL);
    ::waitpid(c.pid, &c.status, 0);
    c.pid = -1;
  }
  c.alive = false;
}

}  // namespace

ExternalSimulator::ExternalSimulator(ExternalOptions opts) : opts_(std::move(opts)) {
  if (opts_.command.empty()) throw SimulatorError("external simulator command is empty");
  if (opts_.outputs.empty()) throw SimulatorError("external simulator declares no outputs");
  if (opts_.max_in_flight == 0) opts_.max_in_flight = 1;
}

std::vector<PointRun> ExternalSimulator::run(const std::vector<Point>& xs, const std::vector<std::size_t>& reps,
                                             std::uint64_t seed, std::size_t workers) {
  if (reps.size() != xs.size()) throw DomainError("one rep count per point is required");
  const std::size_t n = xs.size();
  std::vector<PointRun> out(n);
  if (n == 0) return out;

  std::vector<std::string> env_strings;
  for (char** e = environ; *e; ++e) {
    std::string s(*e);
    const std::string key = s.substr(0, s.find('='));
    if (key == "WAVECAL_SIM_SEED" || opts_.env.count(key)) continue;
    env_strings.push_back(std::move(s));
  }
  for (const auto& [k, v] : opts_.env) env_strings.push_back(k + "=" + v);
  env_strings.push_back("WAVECAL_SIM_SEED=" + std::to_string(seed));

  std::deque<std::size_t> todo;
  for (std::size_t i = 0; i < n; ++i) todo.push_back(i);
  std::vector<std::size_t> attempts(n, 0);
  std::vector<char> done(n, 0);
  std::size_t n_done = 0;
  std::map<long long, Pending> pending;
  long long next_id = 0;

  const std::size_t n_children = std::max<std::size_t>(1, std::min(workers, n));
  std::vector<Child> children;
  std::size_t spawns = 0;
  const std::size_t max_spawns = n_children + 2 * n + 2;

  auto finish = [&](std::size_t point, std::string error) {
    if (done[point]) return;
    done[point] = 1;
    ++n_done;
    if (!error.empty()) {
      out[point].ok = false;
      out[point].values.clear();
      out[point].error = std::move(error);
    }
  };
  // Re-queue after a failed attempt, or give up once retries are spent.
  auto retry = [&](std::size_t point, const std::string& why) {
    if (done[point]) return;
    if (++attempts[point] > opts_.retries) {
      finish(point, why);
    } else {
      todo.push_front(point);
    }
  };
  auto drop_request = [&](long long id) {
    auto it = pending.find(id);
    if (it == pending.end()) return;
    auto& fl = children[it->second.child].inflight;
    fl.erase(std::remove(fl.begin(), fl.end(), id), fl.end());
    pending.erase(it);
  };
  auto child_died = [&](std::size_t ci, const std::string& why, bool kill_it) {
    Child& c = children[ci];
    const auto ids = std::vector<long long>(c.inflight.begin(), c.inflight.end());
    close_child(c, kill_it);
    std::string reason = why;
    if (WIFEXITED(c.status)) reason += " (exit status " + std::to_string(WEXITSTATUS(c.status)) + ")";
    for (long long id : ids) {
      const std::size_t point = pending.at(id).point;
      drop_request(id);
      retry(point, reason);
    }
  };

  auto handle_line = [&](std::size_t ci, const std::string& line) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) return;
    nlohmann::json msg;
    try {
      msg = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      // Unattributable: charge the oldest request on this child.
      if (children[ci].inflight.empty()) return;
      const long long id = children[ci].inflight.front();
      const std::size_t point = pending.at(id).point;
      drop_request(id);
      retry(point, "malformed response: " + line.substr(0, 200));
      return;
    }
    if (!msg.is_object() || !msg.contains("id") || !msg["id"].is_number_integer()) {
      if (children[ci].inflight.empty()) return;
      const long long id = children[ci].inflight.front();
      const std::size_t point = pending.at(id).point;
      drop_request(id);
      retry(point, "response without an integer id");
      return;
    }
    const long long id = msg["id"].get<long long>();
    auto it = pending.find(id);
    if (it == pending.end()) return;  // stale or unknown id
    const std::size_t point = it->second.point;
    drop_request(id);
    std::string problem;
    std::vector<std::vector<double>> values(reps[point], std::vector<double>(opts_.outputs.size()));
    if (!msg.contains("outputs") || !msg["outputs"].is_object()) {
      problem = "response without an outputs object";
    } else {
      const auto& outs = msg["outputs"];
      for (std::size_t a = 0; a < opts_.outputs.size() && problem.empty(); ++a) {
        const auto f = outs.find(opts_.outputs[a]);
        if (f == outs.end() || !f->is_array()) {
          problem = "output '" + opts_.outputs[a] + "' missing";
        } else if (f->size() != reps[point]) {
          problem = "output '" + opts_.outputs[a] + "' has " + std::to_string(f->size()) + " values, expected " +
                    std::to_string(reps[point]);
        } else {
          for (std::size_t r = 0; r < reps[point]; ++r) {
            if (!(*f)[r].is_number()) {
              problem = "output '" + opts_.outputs[a] + "' has a non-numeric value";
              break;
            }
            values[r][a] = (*f)[r].get<double>();
          }
        }
      }
    }
    if (!problem.empty()) {
      retry(point, "schema mismatch: " + problem);
      return;
    }
    out[point].ok = true;
    out[point].values = std::move(values);
    finish(point, {});
  };

  while (n_done < n) {
    // Keep the pool populated while work remains.
    std::size_t live = 0;
    for (const auto& c : children) live += c.alive ? 1 : 0;
    while (live < n_children && (!todo.empty()) && spawns < max_spawns) {
      children.push_back(spawn(opts_.command, env_strings));
      ++spawns;
      ++live;
    }
    if (live == 0) {
      while (!todo.empty()) {
        finish(todo.front(), "simulator process could not be kept alive");
        todo.pop_front();
      }
      break;
    }

    const auto now = Clock::now();
    for (std::size_t ci = 0; ci < children.size(); ++ci) {
      Child& c = children[ci];
      while (c.alive && c.inflight.size() < opts_.max_in_flight && !todo.empty()) {
        const std::size_t point = todo.front();
        todo.pop_front();
        if (done[point]) continue;
        const long long id = next_id++;
        nlohmann::json params = nlohmann::json::object();
        for (std::size_t j = 0; j < opts_.param_names.size() && j < xs[point].size(); ++j) {
          params[opts_.param_names[j]] = xs[point][j];
        }
        nlohmann::json req = {{"id", id}, {"params", params}, {"reps", reps[point]}, {"seed", point_seed(seed, xs[point])}};
        c.wbuf += req.dump();
        c.wbuf += '\n';
        c.inflight.push_back(id);
        pending[id] = Pending{point, ci, now + opts_.timeout};
      }
    }

    std::vector<pollfd> fds;
    std::vector<std::pair<std::size_t, bool>> owner;  // child, is_write
    for (std::size_t ci = 0; ci < children.size(); ++ci) {
      Child& c = children[ci];
      if (!c.alive) continue;
      if (!c.wbuf.empty()) {
        fds.push_back({c.in_fd, POLLOUT, 0});
        owner.emplace_back(ci, true);
      }
      fds.push_back({c.out_fd, POLLIN, 0});
      owner.emplace_back(ci, false);
    }
    auto next_deadline = Clock::time_point::max();
    for (const auto& [id, p] : pending) next_deadline = std::min(next_deadline, p.deadline);
    int wait_ms = 1000;
    if (next_deadline != Clock::time_point::max()) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(next_deadline - Clock::now()).count();
      wait_ms = static_cast<int>(std::clamp<long long>(left + 1, 0, 1000));
    }
    const int rc = ::poll(fds.data(), fds.size(), wait_ms);
    if (rc < 0 && errno != EINTR) throw SimulatorError(std::string("poll failed: ") + std::strerror(errno));

    for (std::size_t k = 0; rc > 0 && k < fds.size(); ++k) {
      const auto [ci, is_write] = owner[k];
      Child& c = children[ci];
      if (!c.alive || fds[k].revents == 0) continue;
      if (is_write) {
        if (fds[k].revents & (POLLERR | POLLHUP)) {
          child_died(ci, "simulator closed its input", true);
          continue;
        }
        const ssize_t w = ::send(c.in_fd, c.wbuf.data(), c.wbuf.size(), MSG_NOSIGNAL);
        if (w > 0) {
          c.wbuf.erase(0, static_cast<std::size_t>(w));
        } else if (w < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
          child_died(ci, "simulator closed its input", true);
        }
        continue;
      }
      char buf[65536];
      const ssize_t r = ::read(c.out_fd, buf, sizeof buf);
      if (r > 0) {
        c.rbuf.append(buf, static_cast<std::size_t>(r));
        std::size_t pos;
        while (c.alive && (pos = c.rbuf.find('\n')) != std::string::npos) {
          const std::string line = c.rbuf.substr(0, pos);
          c.rbuf.erase(0, pos + 1);
          handle_line(ci, line);
        }
      } else if (r == 0 || (errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR)) {
        child_died(ci, "simulator exited", false);
      }
    }

    // Timeouts fail the request outright; the stuck child is replaced and
    // its other requests re-queued without charging them an attempt.
    const auto t = Clock::now();
    std::vector<std::size_t> stuck;
    for (const auto& [id, p] : pending) {
      if (p.deadline <= t) stuck.push_back(p.child);
    }
    std::sort(stuck.begin(), stuck.end());
    stuck.erase(std::unique(stuck.begin(), stuck.end()), stuck.end());
    for (std::size_t ci : stuck) {
      Child& c = children[ci];
      const auto ids = std::vector<long long>(c.inflight.begin(), c.inflight.end());
      close_child(c, true);
      for (long long id : ids) {
        const Pending p = pending.at(id);
        drop_request(id);
        if (p.deadline <= t) {
          finish(p.point, "simulator timed out");
        } else if (!done[p.point]) {
          todo.push_front(p.point);
        }
      }
    }
  }

  for (auto& c : children) {
    if (!c.alive) continue;
    ::close(c.in_fd);  // EOF tells a well-behaved child to exit
    c.in_fd = -1;
    bool exited = false;
    for (int i = 0; i < 50 && !exited; ++i) {
      exited = ::waitpid(c.pid, &c.status, WNOHANG) == c.pid;
      if (!exited) ::usleep(10000);
    }
    if (exited) c.pid = -1;
    close_child(c, !exited);
  }
  return out;
}

}  // namespace wavecal
