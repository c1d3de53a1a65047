#pragma once

// Shared sources and small corpora for the test binaries.

#include <string>

#include "vulnmt/corpus.hpp"
#include "vulnmt/util.hpp"

namespace fixtures {

// Elided statements of the published listing are kept as comments; the
// truncated modulo line is completed with its divisor.
inline const std::string kIgmpVulnerable = R"(static void igmp_heard_query(struct in_device *in_dev, struct sk_buff *skb, int len) {
 /* ... */
 int max_delay;
 if (len == 8) {
  /* ... */
 } else if (IGMP_V2_SEEN(in_dev)) {
  max_delay = IGMPV3_MRC(ih3->code)*(HZ/IGMP_TIMER_SCALE);


 } else {
  /* ... */
 }
 rcu_read_lock();
 for_each_pmc_rcu(in_dev, im) {
  /* ... */
  igmp_start_timer(im, max_delay);
 }
 rcu_read_unlock();
}
static void igmp_start_timer(struct ip_mc_list *im,       int max_delay) {
 int tv = net_random() % max_delay;
 im->tm_running = 1;
 if (!mod_timer(&im->timer, jiffies+tv+2))
  atomic_inc(&im->refcnt);
}
)";

inline const std::string kIgmpFixed = R"(static void igmp_heard_query(struct in_device *in_dev, struct sk_buff *skb, int len) {
 /* ... */
 int max_delay;
 if (len == 8) {
  /* ... */
 } else if (IGMP_V2_SEEN(in_dev)) {
  max_delay = IGMPV3_MRC(ih3->code)*(HZ/IGMP_TIMER_SCALE);
  if (!max_delay)
   max_delay = 1;
 } else {
  /* ... */
 }
 rcu_read_lock();
 for_each_pmc_rcu(in_dev, im) {
  /* ... */
  igmp_start_timer(im, max_delay);
 }
 rcu_read_unlock();
}
static void igmp_start_timer(struct ip_mc_list *im,       int max_delay) {
 int tv = net_random() % max_delay;
 im->tm_running = 1;
 if (!mod_timer(&im->timer, jiffies+tv+2))
  atomic_inc(&im->refcnt);
}
)";

// The format string of the last call is cut off in the published listing.
inline const std::string kDevLoad = R"(void dev_load (struct net* netw, const char* name) {
 struct net_device* dev;
 rcu_read_lock();
 dev = dev_get_by_name_rcu(netw , name);
 rcu_read_unlock();
 if (!dev && capable(CAP_NET_ADMIN))
  request_module("%s", name);
}
)";

inline const std::string kDevLoadAbstracted =
    "void F_1 ( struct T_1 * V_1 , const char * V_2 ) { struct T_2 * V_3 ; F_2 ( ) ; V_3 = F_3 ( V_1 , V_2 ) ; "
    "F_4 ( ) ; if ( ! V_3 && F_5 ( V_4 ) ) F_6 ( L_1 , V_2 ) ; }";

/// Two releases; a.c is vulnerable in r1 (fixed before r2), b.c never.
inline vulnmt::corpus::Corpus tiny_corpus(const std::string& detection = "2020-03-01") {
    using namespace vulnmt::corpus;
    Corpus c;
    c.projectName = "tiny";
    Release r1{"r1", vulnmt::Date::parse("2020-01-01"), {}};
    r1.components.push_back({"a.c", kIgmpVulnerable, Label::Vulnerable, kIgmpFixed, {"V-1"}});
    r1.components.push_back({"b.c", kDevLoad, Label::NonVulnerable, std::nullopt, {}});
    Release r2{"r2", vulnmt::Date::parse("2020-07-01"), {}};
    r2.components.push_back({"a.c", kIgmpFixed, Label::NonVulnerable, std::nullopt, {}});
    r2.components.push_back({"b.c", kDevLoad, Label::NonVulnerable, std::nullopt, {}});
    c.releases = {r1, r2};
    c.vulnerabilities.push_back({"V-1", vulnmt::Date::parse(detection), {{"r1", "a.c"}}});
    return c;
}

}  // namespace fixtures
