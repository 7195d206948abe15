#include "hpfem/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hpfem
{

namespace
{
std::atomic<int> g_threads{1};
}

void set_num_threads(int n)
{
  g_threads = std::max(1, n);
}

int num_threads()
{
  return g_threads;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body)
{
  const int nt = std::min<std::size_t>(static_cast<std::size_t>(num_threads()), n);
  if (nt <= 1)
  {
    for (std::size_t i = 0; i < n; ++i)
      body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> workers;
  for (int t = 0; t < nt; ++t)
    workers.emplace_back([&] {
      for (;;)
      {
        const std::size_t i = next++;
        if (i >= n)
          return;
        try
        {
          body(i);
        }
        catch (...)
        {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!error)
            error = std::current_exception();
        }
      }
    });
  for (auto& w : workers)
    w.join();
  if (error)
    std::rethrow_exception(error);
}

} // namespace hpfem
