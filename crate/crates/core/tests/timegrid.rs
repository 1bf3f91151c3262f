use chrono::{NaiveDate, TimeDelta};
use citypulse::timegrid::{all_slots, classify_timestamp, DayGroup, HourGroup, TimeSlot};

// Reference classification from minutes since Monday 00:00.
fn reference(minute_of_week: i64) -> (usize, usize) {
    let m = minute_of_week.rem_euclid(7 * 1440);
    let hour = (m % 1440) / 60;
    let hour_group = match hour {
        5..=10 => 0,
        11..=14 => 1,
        15..=19 => 2,
        _ => 3,
    };
    // Before 05:00 counts toward the previous calendar day.
    let day = if hour < 5 { (m / 1440 + 6) % 7 } else { m / 1440 };
    let day_group = match day {
        0..=3 => 0,
        4 => 1,
        5 => 2,
        _ => 3,
    };
    (day_group as usize, hour_group as usize)
}

#[test]
fn every_minute_of_a_week_has_exactly_one_slot() {
    // 2012-01-02 is a Monday.
    let monday = NaiveDate::from_ymd_opt(2012, 1, 2).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let mut minutes = [0u32; 16];
    for m in 0..7 * 1440 {
        for second in [0, 59] {
            let ts = monday + TimeDelta::minutes(m) + TimeDelta::seconds(second);
            let slot = classify_timestamp(ts);
            let (d, h) = reference(m);
            assert_eq!((slot.day_group.index(), slot.hour_group.index()), (d, h), "{ts}");
            if second == 0 {
                minutes[slot.index()] += 1;
            }
        }
    }
    let hours = [6, 4, 5, 9];
    let days = [4, 1, 1, 1];
    for slot in all_slots() {
        let want = days[slot.day_group.index()] * hours[slot.hour_group.index()] * 60;
        assert_eq!(minutes[slot.index()], want, "{slot}");
    }
    assert_eq!(minutes.iter().sum::<u32>(), 10_080);
}

#[test]
fn slot_boundaries() {
    let at = |d: u32, h: u32, m: u32, s: u32| {
        classify_timestamp(NaiveDate::from_ymd_opt(2012, 1, d).unwrap().and_hms_opt(h, m, s).unwrap())
    };
    use DayGroup::*;
    use HourGroup::*;
    // 2012-01-06 is a Friday.
    assert_eq!(at(6, 4, 59, 59), TimeSlot::new(MonThu, Night));
    assert_eq!(at(6, 5, 0, 0), TimeSlot::new(Friday, Morning));
    assert_eq!(at(6, 10, 59, 59), TimeSlot::new(Friday, Morning));
    assert_eq!(at(6, 11, 0, 0), TimeSlot::new(Friday, Noon));
    assert_eq!(at(6, 15, 0, 0), TimeSlot::new(Friday, Afternoon));
    assert_eq!(at(6, 20, 0, 0), TimeSlot::new(Friday, Night));
    assert_eq!(at(7, 4, 0, 0), TimeSlot::new(Friday, Night));
    assert_eq!(at(8, 23, 0, 0), TimeSlot::new(Sunday, Night));
    assert_eq!(at(9, 3, 0, 0), TimeSlot::new(Sunday, Night));
    assert_eq!(at(9, 5, 0, 0), TimeSlot::new(MonThu, Morning));
}

#[test]
fn slot_labels_round_trip() {
    for slot in all_slots() {
        assert_eq!(slot.key().parse::<TimeSlot>().unwrap(), slot);
        assert_eq!(TimeSlot::from_index(slot.index()), Some(slot));
    }
    assert!("Weekend_Noon".parse::<TimeSlot>().is_err());
    assert!("MonThu_Evening".parse::<TimeSlot>().is_err());
}
